#include "checks.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "rsmg/gradcheck.hpp"
#include "rsmg/io.hpp"
#include "rsmg/pipeline.hpp"

namespace rsmg::checks {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor rand_t(Shape shape, Rng& rng) { return uniform(std::move(shape), 1.0f, rng); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, double(std::abs(a.data()[i] - b.data()[i])));
  return m;
}

double sum_squares(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data()) s += double(v) * v;
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

void randomize_zeros(const ParamList& params, Rng& rng) {
  std::uniform_real_distribution<float> dist(-0.3f, 0.3f);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    auto d = t.data();
    if (std::all_of(d.begin(), d.end(), [](float v) { return v == 0.0f; }))
      for (auto& v : d) v = dist(rng);
  }
}

std::vector<Tensor> tensors_of(const ParamList& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

// Equalised gradient maps are piecewise constant; probes must not cross a bin.
bool bins_well_separated(const Tensor& x) {
  const auto s = dwt2(x);
  const int hw = s.hl.dim(2) * s.hl.dim(3);
  for (std::int64_t p = 0; p < s.hl.numel() / hw; ++p) {
    std::vector<float> m(hw);
    for (int j = 0; j < hw; ++j) {
      const auto k = p * hw + j;
      m[j] = std::sqrt(s.hl.data()[k] * s.hl.data()[k] + s.lh.data()[k] * s.lh.data()[k] +
                       s.hh.data()[k] * s.hh.data()[k]);
    }
    std::sort(m.begin(), m.end());
    const float bin = (m.back() - m.front()) / 256.0f;
    for (int j = 1; j < hw; ++j)
      if (m[j] - m[j - 1] < 8.0f * bin) return false;
  }
  return true;
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Outcome wavelet_round_trip() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const std::vector<Shape> shapes = {{1, 1, 2, 2}, {2, 3, 4, 6}, {1, 2, 10, 4}, {3, 5, 8, 12}, {4, 8, 16, 16}};
  double worst_abs = 0.0, worst_energy = 0.0;
  for (int rep = 0; rep < 4; ++rep)
    for (const auto& shape : shapes) {
      const Tensor x = rand_t(shape, rng);
      const SubbandSet s = dwt2(x);
      worst_abs = std::max(worst_abs, max_abs_diff(idwt2(s), x));
      const double e_in = sum_squares(x);
      const double e_out = sum_squares(s.ll) + sum_squares(s.hl) + sum_squares(s.lh) + sum_squares(s.hh);
      worst_energy = std::max(worst_energy, std::abs(e_out - e_in) / e_in);
    }
  const double elapsed = seconds_since(t0);
  const bool ok = worst_abs <= 1e-5 && worst_energy <= 1e-4 && elapsed < 1.0;
  return {ok, "max abs " + fmt(worst_abs) + ", energy rel " + fmt(worst_energy) + ", " + fmt(elapsed) + " s"};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng(202);
  int passed = 0, total = 0;
  double worst = 0.0;
  std::string worst_name, failed;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& wrt) {
    const auto r = gradcheck(f, wrt);
    ++total;
    if (r.ok) ++passed;
    else failed += (failed.empty() ? "" : ",") + name;
    if (r.rel_error > worst) {
      worst = r.rel_error;
      worst_name = name;
    }
  };

  Tensor a = param(rand_t({3, 4}, rng)), b = param(rand_t({3, 4}, rng));
  const Tensor w = rand_t({3, 4}, rng);
  auto weighted = [w](const Tensor& t) { return sum(mul(t, w)); };
  check("add", [&] { return weighted(add(a, b)); }, {a, b});
  check("sub", [&] { return weighted(sub(a, b)); }, {a, b});
  check("mul", [&] { return weighted(mul(a, b)); }, {a, b});
  check("scale", [&] { return weighted(add_scalar(scale(a, -1.7f), 0.3f)); }, {a});
  check("gelu", [&] { return weighted(gelu(a)); }, {a});
  check("sigmoid", [&] { return weighted(sigmoid(a)); }, {a});
  check("square", [&] { return weighted(square(a)); }, {a});
  check("exp", [&] { return weighted(exp(a)); }, {a});
  Tensor pos = param(add_scalar(scale(rand_t({3, 4}, rng), 0.3f), 1.5f));
  check("sqrt", [&] { return weighted(sqrt(pos)); }, {pos});
  check("log", [&] { return weighted(log(pos)); }, {pos});
  Tensor away = param(rand_t({3, 4}, rng));
  for (auto& v : away.data()) v = v < 0 ? v - 0.1f : v + 0.1f;
  check("relu", [&] { return weighted(relu(away)); }, {away});
  check("maximum", [&] { return weighted(maximum(away, scale(away, -1.0f))); }, {away});
  Tensor m1 = param(rand_t({3, 5}, rng)), m2 = param(rand_t({5, 4}, rng));
  check("matmul", [&] { return weighted(matmul(m1, m2)); }, {m1, m2});
  Tensor b1 = param(rand_t({2, 3, 5}, rng)), b2 = param(rand_t({2, 5, 2}, rng));
  const Tensor wb = rand_t({2, 3, 2}, rng);
  check("bmm", [&] { return sum(mul(bmm(b1, b2), wb)); }, {b1, b2});
  Tensor lw = param(rand_t({4, 2}, rng)), lb = param(rand_t({2}, rng));
  const Tensor wlin = rand_t({3, 2}, rng);
  check("linear", [&] { return sum(mul(linear(a, lw, &lb), wlin)); }, {a, lw, lb});

  Tensor x4 = param(rand_t({2, 3, 4, 4}, rng));
  Tensor ch = param(rand_t({3}, rng)), mp = param(rand_t({2, 1, 4, 4}, rng)), sc = param(Tensor({1}, 0.4f));
  const Tensor w4 = rand_t({2, 3, 4, 4}, rng);
  auto weighted4 = [w4](const Tensor& t) { return sum(mul(t, w4)); };
  check("broadcast channel", [&] { return weighted4(mul(x4, ch)); }, {x4, ch});
  check("broadcast map", [&] { return weighted4(add(x4, mp)); }, {x4, mp});
  check("broadcast scalar", [&] { return weighted4(mul(x4, sc)); }, {x4, sc});
  check("permute", [&] { return sum(mul(permute(x4, {0, 2, 3, 1}), permute(w4, {0, 2, 3, 1}))); }, {x4});
  check("reshape", [&] { return sum(mul(reshape(a, {4, 3}), reshape(w, {4, 3}))); }, {a});
  check("slice+concat", [&] { return weighted4(concat({slice(x4, 1, 2, 1), slice(x4, 1, 0, 2)}, 1)); }, {x4});
  const std::vector<int> rows{2, 0, 2};
  check("gather_rows", [&] { return weighted(gather_rows(a, rows)); }, {a});

  Tensor cw = param(rand_t({2, 3, 3, 3}, rng)), cb = param(rand_t({2}, rng));
  for (PadMode mode : {PadMode::Zero, PadMode::Reflect})
    for (int stride : {1, 2}) {
      const Tensor wo = rand_t(conv2d(x4, cw, &cb, stride, mode).shape(), rng);
      check("conv2d", [&] { return sum(mul(conv2d(x4, cw, &cb, stride, mode), wo)); }, {x4, cw, cb});
    }
  Tensor odd = param(rand_t({1, 2, 3, 5}, rng));
  const Tensor wpad = rand_t({1, 2, 4, 6}, rng);
  check("pad_reflect", [&] { return sum(mul(pad_reflect(odd, 0, 1, 0, 1), wpad)); }, {odd});
  const Tensor wpool = rand_t({2, 3, 2, 2}, rng), wg = rand_t({2, 3}, rng), wc = rand_t({2, 1, 4, 4}, rng);
  check("avg_pool2", [&] { return sum(mul(avg_pool2(x4), wpool)); }, {x4});
  check("mean_hw", [&] { return sum(mul(mean_hw(x4), wg)); }, {x4});
  check("channel_mean", [&] { return sum(mul(channel_mean(x4), wc)); }, {x4});
  check("channel_max", [&] { return sum(mul(channel_max(x4), wc)); }, {x4});
  check("mean", [&] { return mean(mul(x4, w4)); }, {x4});

  check("softmax", [&] { return weighted(softmax(a)); }, {a});
  Tensor sq = param(rand_t({2, 3, 3}, rng));
  const Tensor wsq = rand_t({2, 3, 3}, rng);
  check("causal softmax", [&] { return sum(mul(softmax(sq, true), wsq)); }, {sq});
  check("log_softmax", [&] { return weighted(log_softmax(a)); }, {a});
  Tensor gamma = param(rand_t({4}, rng)), beta = param(rand_t({4}, rng));
  check("layer_norm", [&] { return weighted(layer_norm(a, gamma, beta)); }, {a, gamma, beta});
  const Tensor wl = rand_t({3}, rng);
  check("sum_last", [&] { return sum(mul(sum_last(a), wl)); }, {a});
  check("l2_normalize_rows", [&] { return weighted(l2_normalize_rows(a)); }, {a});
  const std::vector<int> labels{1, 3, 0};
  check("cross_entropy", [&] { return cross_entropy(a, labels); }, {a});
  const Tensor soft = softmax(rand_t({3, 4}, rng));
  check("soft_cross_entropy", [&] { return soft_cross_entropy(a, soft); }, {a});

  Tensor xw = param(rand_t({2, 3, 4, 6}, rng));
  const Tensor ws = rand_t({2, 3, 2, 3}, rng);
  check("dwt2", [&] {
    const auto s = dwt2(xw);
    return add(add(sum(mul(s.ll, ws)), sum(mul(s.lh, ws))), add(sum(mul(s.hl, ws)), sum(mul(s.hh, scale(ws, 0.5f)))));
  }, {xw});
  Tensor ll = param(rand_t({2, 3, 2, 3}, rng)), hh = param(rand_t({2, 3, 2, 3}, rng));
  const Tensor fixed = rand_t({2, 3, 2, 3}, rng), wi = rand_t({2, 3, 4, 6}, rng);
  check("idwt2", [&] { return sum(mul(idwt2({ll, fixed, fixed, hh}), wi)); }, {ll, hh});

  {
    auto p = MhwsaParams::make(8, rng);
    ParamList named;
    p.collect("mhwsa", named);
    randomize_zeros(named, rng);
    Tensor z = param(rand_t({2, 8, 4, 4}, rng));
    const Tensor wz = rand_t({2, 8, 4, 4}, rng);
    auto wrt = tensors_of(named);
    wrt.insert(wrt.begin(), z);
    check("MHWSA", [&] { return sum(mul(mhwsa_forward(z, p), wz)); }, wrt);
  }
  {
    auto p = WctMixerParams::make(4, rng);
    ParamList named;
    p.collect("wct", named);
    randomize_zeros(named, rng);
    Tensor z = param(rand_t({1, 4, 4, 4}, rng));
    const Tensor wz = rand_t({1, 4, 4, 4}, rng);
    auto wrt = tensors_of(named);
    wrt.insert(wrt.begin(), z);
    check("WCTMixer", [&] { return sum(mul(wctmixer_forward(z, p), wz)); }, wrt);
  }
  {
    auto p = CtMixerParams::make(8, 2, rng);
    ParamList named;
    p.collect("ct", named);
    randomize_zeros(named, rng);
    Tensor z = param(rand_t({1, 8, 3, 3}, rng));
    const Tensor wz = rand_t({1, 8, 3, 3}, rng);
    auto wrt = tensors_of(named);
    wrt.insert(wrt.begin(), z);
    check("CTMixer", [&] { return sum(mul(ctmixer_forward(z, p), wz)); }, wrt);
  }
  {
    auto p = FrgcmParams::make(3, 4, rng);
    ParamList named;
    p.collect("frgcm", named);
    randomize_zeros(named, rng);
    Tensor z = param(rand_t({1, 3, 4, 4}, rng));
    const Tensor wz = rand_t({1, 4, 4, 4}, rng);
    auto wrt = tensors_of(named);
    wrt.insert(wrt.begin(), z);
    check("FRGCM", [&] { return sum(mul(frgcm_forward(z, p), wz)); }, wrt);
  }
  {
    Tensor x = param(rand_t({3, 2, 2, 2}, rng));
    const Tensor wx = rand_t({3, 2, 2, 2}, rng);
    const std::vector<float> rho{0.8f, -0.5f, 1.3f};
    check("resample_ll", [&] { return sum(mul(resample_ll(x, rho), wx)); }, {x});
  }
  {
    Tensor x1, x2;
    for (int attempt = 0; attempt < 500; ++attempt) {
      x1 = rand_t({2, 2, 4, 4}, rng);
      x2 = rand_t({2, 2, 4, 4}, rng);
      if (bins_well_separated(x1) && bins_well_separated(x2)) break;
    }
    x1.set_requires_grad(true);
    x2.set_requires_grad(true);
    const auto params = MwdisParams::make(2, 2, rng);
    const Tensor w1 = rand_t({2, 2, 4, 4}, rng), w2 = rand_t({2, 2, 4, 4}, rng);
    ParamList named;
    params.collect("mwdis", named);
    auto wrt = tensors_of(named);
    wrt.insert(wrt.begin(), {x1, x2});
    check("MWDis forward", [&] {
      const auto [y1, y2] = mwdis_forward(x1, x2, {0.5f, 4}, params);
      return add(sum(mul(y1, w1)), sum(mul(y2, w2)));
    }, wrt);
  }
  {
    TteConfig cfg;
    cfg.vocab_size = 20;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.d_emb = 8;
    auto p = TteParams::make(cfg, rng);
    ParamList named;
    p.collect("tte", named);
    randomize_zeros(named, rng);
    const std::vector<int> ids{18, 4, 19};
    const Tensor wt = rand_t({8}, rng);
    check("TTE", [&] { return sum(mul(tte_forward(ids, p, 19), wt)); }, tensors_of(named));
  }
  {
    const int n = 4, c = 4, d = 8;
    const auto heads = ProjectionHeads::make(c, d, rng);
    std::array<StageFeatures, 2> feats;
    for (auto& f : feats) f = {rand_t({n, c, 4, 4}, rng), rand_t({n, c, 2, 2}, rng)};
    TextCatalog cat;
    cat.classes = {"a", "b", "c"};
    cat.shared = {"x", "y", "z"};
    cat.specific = {{"x1", "x2"}, {"y1", "y2"}, {"z1", "z2"}};
    TextEmbeddings text;
    text.texts = build_class_texts(cat, TextMode::SharedSpecific);
    text.rows = l2_normalize_rows(rand_t({9, d}, rng));
    const std::array<Linear, 2> cls{Linear::xavier(d, 3, rng), Linear::xavier(d, 3, rng)};
    const LogitScale logit_scale = LogitScale::make();
    const std::vector<int> labels{0, 1, 2, 0};
    ParamList named;
    heads.collect("heads", named);
    logit_scale.collect("scale", named);
    check("MSFFA total loss", [&] {
      const std::array<ModalityEmbeddings, 2> emb{project_multiscale(feats[0], heads), project_multiscale(feats[1], heads)};
      const std::array<Tensor, 2> logits{cls[0](emb[0][1][0]), cls[1](emb[1][1][0])};
      return total_loss(emb, text, logits, labels, logit_scale, {}).total;
    }, tensors_of(named));
  }

  const double elapsed = seconds_since(t0);
  const bool ok = passed == total && elapsed < 60.0;
  std::string detail = std::to_string(passed) + "/" + std::to_string(total) + " pass, worst " + fmt(worst) + " (" +
                       worst_name + "), " + fmt(elapsed) + " s";
  if (!failed.empty()) detail += ", failed: " + failed;
  return {ok, detail};
}

Outcome resample_identity() {
  Rng rng(303);
  int cases = 0;
  for (const Shape& shape : std::vector<Shape>{{4, 3, 2, 2}, {7, 5, 3, 6}, {2, 16, 6, 6}})
    for (std::uint64_t seed : {0u, 1u, 99u}) {
      const Tensor ll = rand_t(shape, rng);
      if (!bit_equal(resample_ll(ll, ResampleConfig{0.0f, seed}), ll)) return {false, "alpha = 0 changed the input"};
      const Tensor one = rand_t({1, shape[1], shape[2], shape[3]}, rng);
      const Tensor same = concat(std::vector<Tensor>(std::size_t(shape[0]), one), 0);
      for (float alpha : {0.1f, 0.5f, 1.0f})
        if (!bit_equal(resample_ll(same, ResampleConfig{alpha, seed}), same))
          return {false, "identical batch moved at alpha " + fmt(alpha)};
      cases += 4;
    }
  return {true, std::to_string(cases) + " cases bit-exact"};
}

Outcome contrastive_oracle() {
  double worst = 0.0;
  for (int n : {2, 4, 8}) {
    Tensor v(Shape{n, 3});
    for (int i = 0; i < n; ++i) v.data()[i * 3] = 1.0f;
    const Tensor loss = contrastive_loss(v, v, Tensor::scalar(1.0f / 0.07f));
    worst = std::max(worst, std::abs(loss.item() - std::log(double(n))));
  }
  const Tensor logits(Shape{2, 2}, {2, 0, 0, 2});
  const Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
  // row i: -log(e^2 / (e^2 + e^0)); both directions agree on a symmetric matrix
  const double closed = std::log1p(std::exp(-2.0));
  const double hand = std::abs(contrastive_from_logits(logits, eye).item() - closed);
  const bool ok = worst <= 1e-6 && hand <= 1e-6;
  return {ok, "ln N dev " + fmt(worst) + ", hand-logit dev " + fmt(hand)};
}

Outcome metric_oracles() {
  struct Frac {
    std::int64_t num, den;
  };
  auto reduce = [](std::int64_t n, std::int64_t d) {
    const auto g = std::gcd(n, d);
    return g ? Frac{n / g, d / g} : Frac{0, 1};
  };
  auto value = [](Frac f) { return double(f.num) / double(f.den); };

  const Metrics hand = metrics_from_confusion({{2, 1}, {1, 2}});
  if (!(hand.oa == 2.0 / 3.0 && hand.aa == 2.0 / 3.0 && hand.kappa == 1.0 / 3.0))
    return {false, "[[2,1],[1,2]] gave oa " + fmt(hand.oa) + " aa " + fmt(hand.aa) + " kappa " + fmt(hand.kappa)};

  std::mt19937 rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 4;
    const int n = 5 + int(rng() % 300);
    std::vector<int> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = int(rng() % (k + 1)) - 1;
      pred[i] = rng() % 3 == 0 ? std::max(truth[i], 0) : int(rng() % k);
    }
    truth[0] = 0;
    std::vector<std::int64_t> row(k, 0), col(k, 0), diag(k, 0);
    std::int64_t total = 0;
    for (int i = 0; i < n; ++i) {
      if (truth[i] < 0) continue;
      ++row[truth[i]];
      ++col[pred[i]];
      diag[truth[i]] += truth[i] == pred[i];
      ++total;
    }
    const std::int64_t trace = std::accumulate(diag.begin(), diag.end(), std::int64_t{0});
    std::int64_t chance = 0;
    Frac recall{0, 1};
    int supported = 0;
    for (int c = 0; c < k; ++c) {
      chance += row[c] * col[c];
      if (row[c] == 0) continue;
      recall = reduce(recall.num * row[c] + diag[c] * recall.den, recall.den * row[c]);
      ++supported;
    }
    const double oa = value(reduce(trace, total));
    const double aa = value(reduce(recall.num, recall.den * supported));
    const double kappa = value(reduce(total * trace - chance, total * total - chance));
    const Metrics m = compute_metrics(truth, pred, k);
    if (m.oa != oa || m.aa != aa || m.kappa != kappa) return {false, "random case " + std::to_string(trial) + " differs"};
  }
  return {true, "hand case exact, 20/20 random cases exact"};
}

Outcome identity_at_init() {
  Rng rng(505);
  double worst = 0.0;
  for (int rep = 0; rep < 3; ++rep) {
    const Tensor z = rand_t({2, 8, 6, 6}, rng);
    auto frgcm = FrgcmParams::make(8, 8, rng);
    worst = std::max(worst, max_abs_diff(frgcm_forward(z, frgcm), frgcm.proj_in(z)));
    frgcm.proj_in = Conv2d::dirac(8, 1);
    worst = std::max(worst, max_abs_diff(frgcm_forward(z, frgcm), z));
    worst = std::max(worst, max_abs_diff(wctmixer_forward(z, WctMixerParams::make(8, rng)), z));
    worst = std::max(worst, max_abs_diff(ctmixer_forward(z, CtMixerParams::make(8, 2, rng)), z));
    worst = std::max(worst, max_abs_diff(ctmixer_forward(z, CtMixerParams::make(8, 4, rng, false)), z));
  }
  return {worst <= 1e-6, "max deviation " + fmt(worst)};
}

Outcome protocol_hygiene(const std::string& workdir) {
  std::filesystem::create_directories(workdir);
  SynthSpec spec;
  spec.height = spec.width = 32;
  spec.bands = 8;
  const auto [src, tgt] = synth_dataset(spec, ShiftSpec::standard(), 17);
  const auto src_path = (std::filesystem::path(workdir) / "hygiene_source.rsmg").string();
  const auto tgt_path = (std::filesystem::path(workdir) / "hygiene_target.rsmg").string();
  write_scene(src_path, src);
  write_scene(tgt_path, tgt);

  RunConfig cfg = preset_config("desk");
  cfg.epochs = 2;
  cfg.batch = 32;
  cfg.c_model = 8;
  cfg.d_emb = 16;
  cfg.pca_k = 4;
  cfg.text_width = 16;
  cfg.text_layers = 1;
  cfg.seed = 5;
  cfg.source = src_path;
  cfg.target = tgt_path;

  auto& audit = FileAccessAudit::instance();
  audit.clear();
  const TrainResult a = train(cfg);
  const bool source_read = audit.was_opened(src_path);
  const bool target_read = audit.was_opened(tgt_path);
  const auto opens = audit.opened().size();
  const TrainResult b = train(cfg);
  const bool same = a.loss_trace.size() == b.loss_trace.size() &&
                    std::memcmp(a.loss_trace.data(), b.loss_trace.data(), a.loss_trace.size() * sizeof(float)) == 0;
  std::filesystem::remove(src_path);
  std::filesystem::remove(tgt_path);
  const bool ok = source_read && !target_read && same && !a.loss_trace.empty();
  return {ok, std::to_string(opens) + " audited opens, target read " + (target_read ? "yes" : "no") + ", " +
                  std::to_string(a.loss_trace.size()) + "-step traces " + (same ? "bit-identical" : "differ")};
}

Outcome io_bit_exactness(const std::string& workdir) {
  std::filesystem::create_directories(workdir);
  const auto dir = std::filesystem::path(workdir);
  SynthSpec spec;
  spec.height = 40;
  spec.width = 36;
  spec.bands = 12;
  spec.lidar_bands = 2;
  const auto [src, tgt] = synth_dataset(spec, ShiftSpec::standard(), 23);

  const auto scene_path = (dir / "io_scene.rsmg").string();
  const auto again_path = (dir / "io_scene_again.rsmg").string();
  write_scene(scene_path, tgt);
  const SceneCube back = read_scene(scene_path, Domain::Target);
  write_scene(again_path, back);
  const bool scene_ok = bit_equal(back.hs, tgt.hs) && bit_equal(back.lidar, tgt.lidar) && back.labels == tgt.labels &&
                        back.num_classes == tgt.num_classes && file_bytes(scene_path) == file_bytes(again_path);

  Rng rng(606);
  Tensor aux = rand_t({6, 40, 36}, rng);
  aux.data()[0] = -0.0f;
  aux.data()[1] = 1e-38f;
  aux.data()[2] = 3.4e38f;
  const auto aux_path = (dir / "io_aux.bin").string();
  save_diffusion_features(aux_path, aux);
  const Tensor aux_back = load_diffusion_features(aux_path, std::make_pair(40, 36));
  const auto aux_bytes = file_bytes(aux_path);
  const bool aux_ok = bit_equal(aux_back, aux) && aux_bytes.size() == 8 + 12 + std::size_t(aux.numel()) * 4 &&
                      std::memcmp(aux_bytes.data(), kAuxMagic, 8) == 0;

  // Independent P6 parse: tokens separated by whitespace, then a raw RGB raster.
  const int h = 5, w = 7;
  std::vector<int> raster(h * w);
  for (int i = 0; i < h * w; ++i) raster[i] = i % 4 - 1;
  const auto map_path = (dir / "io_map.ppm").string();
  write_classification_map(map_path, raster, h, w);
  const auto bytes = file_bytes(map_path);
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t.push_back(bytes[pos++]);
    return t;
  };
  bool map_ok = token() == "P6" && token() == std::to_string(w) && token() == std::to_string(h) && token() == "255";
  ++pos;
  const unsigned char colours[4][3] = {{0, 0, 0}, {0, 0, 255}, {255, 165, 0}, {0, 128, 0}};
  map_ok = map_ok && bytes.size() - pos == std::size_t(h * w * 3);
  for (int i = 0; map_ok && i < h * w; ++i)
    for (int c = 0; c < 3; ++c)
      map_ok = map_ok && static_cast<unsigned char>(bytes[pos + i * 3 + c]) == colours[raster[i] + 1][c];
  map_ok = map_ok && std::string(bytes.begin(), bytes.begin() + 11) == "P6\n7 5\n255\n";

  for (const auto& p : {scene_path, again_path, aux_path, map_path}) std::filesystem::remove(p);
  return {scene_ok && aux_ok && map_ok, std::string("RSMG1 ") + (scene_ok ? "lossless" : "LOSSY") + ", RSMG1-AUX " +
                                            (aux_ok ? "lossless" : "LOSSY") + ", P6 " + (map_ok ? "exact" : "WRONG")};
}

std::vector<Check> quick_checks(const std::string& workdir) {
  return {
      {1, "wavelet round trip", wavelet_round_trip},
      {2, "gradient suite", gradient_suite},
      {3, "resample identity", resample_identity},
      {4, "contrastive oracle", contrastive_oracle},
      {5, "metric oracles", metric_oracles},
      {6, "identity at init", identity_at_init},
      {8, "protocol hygiene", [workdir] { return protocol_hygiene(workdir); }},
      {9, "IO bit-exactness", [workdir] { return io_bit_exactness(workdir); }},
  };
}

}  // namespace rsmg::checks
