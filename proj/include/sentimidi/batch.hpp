#pragma once

#include <span>
#include <vector>

#include "sentimidi/mlstm.hpp"

namespace sentimidi {

// Workspace for evaluating B independent recurrent lanes: per-lane gradient
// buffers and BPTT caches. Gradients are reduced in fixed lane order after
// the parallel region, so results are bit-identical for any thread count.
template <class S>
struct BatchWorkspace {
    std::vector<MlstmParams<S>> lane_grads;
    std::vector<BpttBuffers<S>> buffers;
    std::vector<S> losses;

    BatchWorkspace(const MlstmDims& dims, int lanes);
    int lanes() const { return static_cast<int>(lane_grads.size()); }
};

// One training step over B lanes. lane_tokens[b] must hold L+1 contiguous
// ids (window inputs plus the shifted targets). States persist in place.
// Returns the mean loss; grads_out receives the lane-averaged gradients.
// The serial path (parallel = false) is the reference implementation the
// OpenMP path is tested against.
template <class S>
S batch_step(const MlstmParams<S>& params, std::vector<MlstmState<S>>& states,
             std::span<const std::span<const int>> lane_tokens, MlstmParams<S>& grads_out,
             BatchWorkspace<S>& ws, bool parallel = true);

// Forward-only counterpart used by evaluation; returns the mean lane loss.
template <class S>
S batch_loss(const MlstmParams<S>& params, std::vector<MlstmState<S>>& states,
             std::span<const std::span<const int>> lane_tokens, bool parallel = true);

}  // namespace sentimidi
