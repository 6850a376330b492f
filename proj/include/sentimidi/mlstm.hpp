#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sentimidi/rng.hpp"

namespace sentimidi {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct MlstmDims {
    int vocab = 225;
    int embed = 64;
    int hidden = 128;

    bool valid() const { return vocab >= 2 && embed >= 1 && hidden >= 1; }
    bool operator==(const MlstmDims&) const = default;
};

inline constexpr int kNumParamTensors = 17;
extern const char* const kParamTensorNames[kNumParamTensors];

// Embedding -> single multiplicative-LSTM layer -> softmax head. The
// intermediate state m = (w_mx x) .* (w_mh h) replaces the hidden state in
// the candidate and all three gate inputs. Weight layout is (out x in);
// 32-bit floats for training, 64-bit for gradient checking.
template <class S>
struct MlstmParams {
    MlstmDims dims;
    MatX<S> embed;       // vocab x embed
    MatX<S> w_mx, w_mh;  // hidden x embed, hidden x hidden
    MatX<S> w_hx, w_hm;  // candidate
    VecX<S> b_h;
    MatX<S> w_ix, w_im;
    VecX<S> b_i;
    MatX<S> w_ox, w_om;
    VecX<S> b_o;
    MatX<S> w_fx, w_fm;
    VecX<S> b_f;
    MatX<S> w_y;  // vocab x hidden
    VecX<S> b_y;

    static MlstmParams zeros(const MlstmDims& dims);
    // Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, forget bias 1,
    // all other biases and the output head zero.
    static MlstmParams init(const MlstmDims& dims, uint64_t seed);

    void set_zero();
    void axpy(S a, const MlstmParams& other);  // this += a * other
    void scale(S a);
    size_t parameter_count() const;
    bool all_finite(std::string* first_bad = nullptr) const;
    bool operator==(const MlstmParams& o) const;

    // Keep the tensor list here in sync with flat(); the order is the
    // checkpoint manifest order.
    template <class F>
    void for_each_tensor(F&& f) {
        f("embed", embed); f("w_mx", w_mx); f("w_mh", w_mh);
        f("w_hx", w_hx); f("w_hm", w_hm); f("b_h", b_h);
        f("w_ix", w_ix); f("w_im", w_im); f("b_i", b_i);
        f("w_ox", w_ox); f("w_om", w_om); f("b_o", b_o);
        f("w_fx", w_fx); f("w_fm", w_fm); f("b_f", b_f);
        f("w_y", w_y); f("b_y", b_y);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        const_cast<MlstmParams*>(this)->for_each_tensor(
            [&](const char* name, const auto& t) { f(name, t); });
    }

    std::array<Eigen::Map<VecX<S>>, kNumParamTensors> flat();
    std::array<Eigen::Map<const VecX<S>>, kNumParamTensors> flat() const;

    template <class S2>
    MlstmParams<S2> cast() const {
        MlstmParams<S2> out = MlstmParams<S2>::zeros(dims);
        auto src = flat();
        auto dst = out.flat();
        for (int k = 0; k < kNumParamTensors; ++k)
            dst[static_cast<size_t>(k)] = src[static_cast<size_t>(k)].template cast<S2>();
        return out;
    }
};

template <class S>
struct MlstmState {
    VecX<S> h, c;

    static MlstmState zero(int hidden) {
        return {VecX<S>::Zero(hidden), VecX<S>::Zero(hidden)};
    }
};

// Sparse additive perturbation applied to selected cell-state dimensions
// right after every cell update (steered sampling).
struct CellOffsets {
    std::vector<std::pair<int, double>> entries;  // (neuron index, offset)

    static CellOffsets from(std::span<const int> indices, std::span<const double> values);
};

// One transition; logits are w_y h' + b_y.
template <class S>
void forward_step(const MlstmParams<S>& p, MlstmState<S>& state, int token, VecX<S>& logits,
                  const CellOffsets* offsets = nullptr);

// Advances the state without computing logits.
template <class S>
void advance(const MlstmParams<S>& p, MlstmState<S>& state, std::span<const int> tokens,
             const CellOffsets* offsets = nullptr);

// Final cell state after processing tokens from a zero state.
template <class S>
VecX<S> final_cell_state(const MlstmParams<S>& p, std::span<const int> tokens);

// Per-window caches for backpropagation through time. Reused across windows.
template <class S>
struct BpttBuffers {
    std::vector<int> ids;
    MatX<S> u, v, m, hhat, gi, go, gf, c, tc, h;  // hidden x L
    MatX<S> logits, dlogits;                      // vocab x L
    MatX<S> dh;                                   // hidden x L
    VecX<S> h0, c0;
    // step scratch
    VecX<S> a, d_h, d_c, da_h, da_i, da_o, da_f, d_m, d_u, d_v, carry_h, carry_c;
    VecX<S> d_x;
    int len = 0;

    void ensure(const MlstmDims& dims, int window);
};

// Fills the caches; returns the state after the last token.
template <class S>
MlstmState<S> forward_collect(const MlstmParams<S>& p, const MlstmState<S>& s0,
                              std::span<const int> tokens, BpttBuffers<S>& buf);

// Exact reverse pass over the cached steps, with dh_inject(:, t) the loss
// gradient flowing directly into h_t. Gradients are accumulated into grads;
// backpropagation truncates at the window start. Head-parameter gradients
// are the caller's responsibility. buf is non-const for its scratch vectors;
// the step caches are left intact.
template <class S>
void backward_steps(const MlstmParams<S>& p, BpttBuffers<S>& buf, const MatX<S>& dh_inject,
                    MlstmParams<S>& grads);

template <class S>
struct ForwardBackwardResult {
    S loss;
    MlstmState<S> final_state;
};

// Mean next-token cross-entropy over the window plus exact gradients for
// every tensor. targets[t] is the id expected after tokens[t].
// Throws NumericError (with the offending position) on non-finite loss.
template <class S>
ForwardBackwardResult<S> forward_backward(const MlstmParams<S>& p, const MlstmState<S>& s0,
                                          std::span<const int> tokens,
                                          std::span<const int> targets, MlstmParams<S>& grads,
                                          BpttBuffers<S>& buf);

// Streaming evaluation: mean cross-entropy, state persisted, no gradients.
template <class S>
S forward_loss(const MlstmParams<S>& p, MlstmState<S>& state, std::span<const int> tokens,
               std::span<const int> targets);

template <class S>
struct AdamState {
    MlstmParams<S> m, v;
    long step = 0;
    S beta1 = static_cast<S>(0.9);
    S beta2 = static_cast<S>(0.999);
    S eps = static_cast<S>(1e-8);

    explicit AdamState(const MlstmDims& dims)
        : m(MlstmParams<S>::zeros(dims)), v(MlstmParams<S>::zeros(dims)) {}

    // Bias-corrected Adam step, applied tensor-wise.
    void update(MlstmParams<S>& params, const MlstmParams<S>& grads, S lr);
};

// Feeds the seed, then samples from softmax(logits / temperature) until the
// end token or max_new tokens. temperature <= 0 means argmax. The returned
// sequence excludes the seed and includes the end token when reached.
template <class S>
std::vector<int> sample(const MlstmParams<S>& p, std::span<const int> seed_tokens, int max_new,
                        double temperature, Rng& rng, const CellOffsets* offsets = nullptr,
                        int end_token = -1);

// ---------------------------------------------------------------------------
// Checkpoint container: 8-byte magic "VMLSTM01", u32 little-endian JSON
// header length, UTF-8 JSON header (dims, vocab hash, tensor manifest with
// offsets into the payload), then raw little-endian float32 tensors in
// manifest order.

struct CheckpointHeader {
    int version = 1;
    MlstmDims dims;
    uint64_t vocab_hash = 0;
    std::string model_kind = "lm";
    nlohmann::json hyper = nlohmann::json::object();
};

void save_checkpoint(std::ostream& out, const MlstmParams<float>& params,
                     const CheckpointHeader& header,
                     const std::vector<std::pair<std::string, const MatX<float>*>>& extra = {});

struct LoadedCheckpoint {
    MlstmParams<float> params;
    CheckpointHeader header;
    std::map<std::string, MatX<float>> extra;
};

// Throws DataError: "corrupt container" on structural damage, "version
// mismatch" on unknown versions, "vocab hash mismatch" when the stored hash
// differs from expected_vocab_hash.
LoadedCheckpoint load_checkpoint(std::istream& in,
                                 std::optional<uint64_t> expected_vocab_hash = std::nullopt);

void save_checkpoint_file(const std::string& path, const MlstmParams<float>& params,
                          const CheckpointHeader& header,
                          const std::vector<std::pair<std::string, const MatX<float>*>>& extra = {});
LoadedCheckpoint load_checkpoint_file(const std::string& path,
                                      std::optional<uint64_t> expected_vocab_hash = std::nullopt);

}  // namespace sentimidi
