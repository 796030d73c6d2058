#pragma once

#include "gridpix/autodiff.hpp"
#include "gridpix/grid.hpp"

namespace gridpix::ad {

// Elementwise / reduction primitives. Shapes must match exactly; there is no
// broadcasting beyond what the network needs.
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
NodePtr scale(NodePtr x, double s);
NodePtr sum_all(NodePtr x);   // -> [1]; accumulates in double
NodePtr mean_all(NodePtr x);  // -> [1]

NodePtr leaky_relu(NodePtr x, float negative_slope);
NodePtr smooth_l1(NodePtr x);

// x: [N,C,H,W]; softmax over the channel axis with max-subtraction.
NodePtr softmax_channels(NodePtr x);
// Softmax restricted to channels where mask ([C,H,W]) is 1; masked channels
// come out exactly 0. The mask is shared across the batch.
NodePtr masked_softmax_channels(NodePtr x, Tensor mask);

// x: [N,Ci,H,W], w: [Co,Ci,kh,kw], bias: [Co] node or nullptr.
NodePtr conv2d(NodePtr x, NodePtr w, NodePtr bias, int stride, int pad,
               int dilation = 1);
// x: [N,Ci,H,W], w: [Ci,Co,kh,kw]; output spatial (H-1)*stride - 2*pad + k.
NodePtr transposed_conv2d(NodePtr x, NodePtr w, NodePtr bias, int stride,
                          int pad);

struct BNState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
};

// Train mode normalizes with batch statistics (and updates *state with the
// configured momentum); eval mode normalizes with the running statistics.
NodePtr batch_norm(NodePtr x, NodePtr gamma, NodePtr beta, BNState* state,
                   float momentum, float eps, bool training);

NodePtr concat_channels(NodePtr a, NodePtr b);

// Association-weighted aggregation: q [N,9,H,W], f [N,C,H,W] -> [N,C,h,w].
NodePtr weighted_cell_mean(NodePtr q, NodePtr f, GridSpec grid);
// q [N,9,H,W], u [N,C,h,w] -> per-pixel convex combination [N,C,H,W].
NodePtr reconstruct_cells(NodePtr q, NodePtr u, GridSpec grid);

// [N,C,H,W] -> [N,1,H,W] Euclidean norm over channels.
NodePtr l2norm_channels(NodePtr x);
// -sum_c target_c * log(x_c + eps); target is a constant one-hot volume.
NodePtr cross_entropy_channels(NodePtr x, Tensor target, float eps);

}  // namespace gridpix::ad
