#pragma once

#include "rsmg/tensor.hpp"

namespace rsmg {

/// The four single-level Haar subbands of an [N,C,H,W] tensor, each [N,C,H/2,W/2].
struct SubbandSet {
  Tensor ll;
  Tensor hl;
  Tensor lh;
  Tensor hh;
};

/// Orthonormal 2-D Haar analysis. For each 2x2 block (a b; c d):
///   ll = (a+b+c+d)/2, hl = (a+b-c-d)/2, lh = (a-b+c-d)/2, hh = (a-b-c+d)/2.
/// Throws OddExtent when H or W is odd.
SubbandSet dwt2(const Tensor& x);

/// Exact inverse of dwt2.
Tensor idwt2(const SubbandSet& s);

}  // namespace rsmg
