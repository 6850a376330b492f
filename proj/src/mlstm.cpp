#include "sentimidi/mlstm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "sentimidi/errors.hpp"
#include "sentimidi/hash.hpp"

namespace sentimidi {

const char* const kParamTensorNames[kNumParamTensors] = {
    "embed", "w_mx", "w_mh", "w_hx", "w_hm", "b_h", "w_ix", "w_im", "b_i",
    "w_ox", "w_om", "b_o", "w_fx", "w_fm", "b_f", "w_y", "b_y"};

template <class S>
MlstmParams<S> MlstmParams<S>::zeros(const MlstmDims& dims) {
    if (!dims.valid()) throw DataError("invalid model dims");
    const int v = dims.vocab, e = dims.embed, n = dims.hidden;
    MlstmParams p;
    p.dims = dims;
    p.embed = MatX<S>::Zero(v, e);
    p.w_mx = MatX<S>::Zero(n, e);
    p.w_mh = MatX<S>::Zero(n, n);
    p.w_hx = MatX<S>::Zero(n, e);
    p.w_hm = MatX<S>::Zero(n, n);
    p.b_h = VecX<S>::Zero(n);
    p.w_ix = MatX<S>::Zero(n, e);
    p.w_im = MatX<S>::Zero(n, n);
    p.b_i = VecX<S>::Zero(n);
    p.w_ox = MatX<S>::Zero(n, e);
    p.w_om = MatX<S>::Zero(n, n);
    p.b_o = VecX<S>::Zero(n);
    p.w_fx = MatX<S>::Zero(n, e);
    p.w_fm = MatX<S>::Zero(n, n);
    p.b_f = VecX<S>::Zero(n);
    p.w_y = MatX<S>::Zero(v, n);
    p.b_y = VecX<S>::Zero(v);
    return p;
}

template <class S>
MlstmParams<S> MlstmParams<S>::init(const MlstmDims& dims, uint64_t seed) {
    MlstmParams p = zeros(dims);
    Rng rng(seed);
    auto fill_uniform = [&](MatX<S>& w) {
        const double s = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        S* data = w.data();
        for (Eigen::Index i = 0; i < w.size(); ++i)
            data[i] = static_cast<S>(rng.uniform(-s, s));
    };
    fill_uniform(p.embed);
    fill_uniform(p.w_mx);
    fill_uniform(p.w_mh);
    fill_uniform(p.w_hx);
    fill_uniform(p.w_hm);
    fill_uniform(p.w_ix);
    fill_uniform(p.w_im);
    fill_uniform(p.w_ox);
    fill_uniform(p.w_om);
    fill_uniform(p.w_fx);
    fill_uniform(p.w_fm);
    p.b_f.setConstant(static_cast<S>(1));  // open forget gates at the start
    return p;
}

template <class S>
void MlstmParams<S>::set_zero() {
    for (auto& t : flat()) t.setZero();
}

template <class S>
void MlstmParams<S>::axpy(S a, const MlstmParams& other) {
    auto dst = flat();
    auto src = other.flat();
    for (int k = 0; k < kNumParamTensors; ++k)
        dst[static_cast<size_t>(k)] += a * src[static_cast<size_t>(k)];
}

template <class S>
void MlstmParams<S>::scale(S a) {
    for (auto& t : flat()) t *= a;
}

template <class S>
size_t MlstmParams<S>::parameter_count() const {
    size_t n = 0;
    for (const auto& t : flat()) n += static_cast<size_t>(t.size());
    return n;
}

template <class S>
bool MlstmParams<S>::all_finite(std::string* first_bad) const {
    bool ok = true;
    for_each_tensor([&](const char* name, const auto& t) {
        if (ok && !t.allFinite()) {
            ok = false;
            if (first_bad) *first_bad = name;
        }
    });
    return ok;
}

template <class S>
bool MlstmParams<S>::operator==(const MlstmParams& o) const {
    if (!(dims == o.dims)) return false;
    auto a = flat();
    auto b = o.flat();
    for (int k = 0; k < kNumParamTensors; ++k)
        if (a[static_cast<size_t>(k)] != b[static_cast<size_t>(k)]) return false;
    return true;
}

template <class S>
std::array<Eigen::Map<VecX<S>>, kNumParamTensors> MlstmParams<S>::flat() {
    auto map = [](auto& t) { return Eigen::Map<VecX<S>>(t.data(), t.size()); };
    return {map(embed), map(w_mx), map(w_mh), map(w_hx), map(w_hm), map(b_h),
            map(w_ix), map(w_im), map(b_i),  map(w_ox), map(w_om), map(b_o),
            map(w_fx), map(w_fm), map(b_f),  map(w_y),  map(b_y)};
}

template <class S>
std::array<Eigen::Map<const VecX<S>>, kNumParamTensors> MlstmParams<S>::flat() const {
    auto map = [](const auto& t) { return Eigen::Map<const VecX<S>>(t.data(), t.size()); };
    return {map(embed), map(w_mx), map(w_mh), map(w_hx), map(w_hm), map(b_h),
            map(w_ix), map(w_im), map(b_i),  map(w_ox), map(w_om), map(b_o),
            map(w_fx), map(w_fm), map(b_f),  map(w_y),  map(b_y)};
}

CellOffsets CellOffsets::from(std::span<const int> indices, std::span<const double> values) {
    if (indices.size() != values.size())
        throw DataError("offset index/value length mismatch");
    CellOffsets o;
    o.entries.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) o.entries.emplace_back(indices[i], values[i]);
    return o;
}

namespace {

template <class S>
void apply_offsets(VecX<S>& c, const CellOffsets* offsets) {
    if (!offsets) return;
    for (const auto& [idx, val] : offsets->entries) {
        if (idx < 0 || idx >= c.size())
            throw DataError("cell offset index out of range: " + std::to_string(idx));
        c[idx] += static_cast<S>(val);
    }
}

template <class S>
void check_token(const MlstmParams<S>& p, int token) {
    if (token < 0 || token >= p.dims.vocab)
        throw DataError("token id out of vocab range: " + std::to_string(token));
}

template <class S>
S log_sum_exp(Eigen::Ref<const VecX<S>> z) {
    const S m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

}  // namespace

template <class S>
void forward_step(const MlstmParams<S>& p, MlstmState<S>& state, int token, VecX<S>& logits,
                  const CellOffsets* offsets) {
    check_token(p, token);
    if (logits.size() != p.dims.vocab) logits.resize(p.dims.vocab);
    const auto x = p.embed.row(token).transpose();
    VecX<S> u = p.w_mx * x;
    VecX<S> v = p.w_mh * state.h;
    VecX<S> m = u.cwiseProduct(v);
    VecX<S> a = p.w_hx * x + p.w_hm * m + p.b_h;
    VecX<S> hhat = a.array().tanh();
    a = p.w_ix * x + p.w_im * m + p.b_i;
    VecX<S> gi = ((-a.array()).exp() + S(1)).inverse();
    a = p.w_ox * x + p.w_om * m + p.b_o;
    VecX<S> go = ((-a.array()).exp() + S(1)).inverse();
    a = p.w_fx * x + p.w_fm * m + p.b_f;
    VecX<S> gf = ((-a.array()).exp() + S(1)).inverse();
    state.c = gf.cwiseProduct(state.c) + gi.cwiseProduct(hhat);
    apply_offsets(state.c, offsets);
    state.h = go.cwiseProduct(state.c.array().tanh().matrix());
    logits.noalias() = p.w_y * state.h;
    logits += p.b_y;
}

template <class S>
void advance(const MlstmParams<S>& p, MlstmState<S>& state, std::span<const int> tokens,
             const CellOffsets* offsets) {
    VecX<S> logits(p.dims.vocab);
    for (int id : tokens) forward_step(p, state, id, logits, offsets);
}

template <class S>
VecX<S> final_cell_state(const MlstmParams<S>& p, std::span<const int> tokens) {
    auto state = MlstmState<S>::zero(p.dims.hidden);
    advance(p, state, tokens, nullptr);
    return state.c;
}

template <class S>
void BpttBuffers<S>::ensure(const MlstmDims& dims, int window) {
    const int n = dims.hidden;
    if (u.rows() != n || u.cols() < window || logits.rows() != dims.vocab) {
        u.resize(n, window);
        v.resize(n, window);
        m.resize(n, window);
        hhat.resize(n, window);
        gi.resize(n, window);
        go.resize(n, window);
        gf.resize(n, window);
        c.resize(n, window);
        tc.resize(n, window);
        h.resize(n, window);
        logits.resize(dims.vocab, window);
        dlogits.resize(dims.vocab, window);
        dh.resize(n, window);
        h0.resize(n);
        c0.resize(n);
        a.resize(n);
        d_h.resize(n);
        d_c.resize(n);
        da_h.resize(n);
        da_i.resize(n);
        da_o.resize(n);
        da_f.resize(n);
        d_m.resize(n);
        d_u.resize(n);
        d_v.resize(n);
        carry_h.resize(n);
        carry_c.resize(n);
        d_x.resize(dims.embed);
    }
    ids.resize(static_cast<size_t>(window));
    len = window;
}

template <class S>
MlstmState<S> forward_collect(const MlstmParams<S>& p, const MlstmState<S>& s0,
                              std::span<const int> tokens, BpttBuffers<S>& buf) {
    const int L = static_cast<int>(tokens.size());
    buf.ensure(p.dims, L);
    buf.h0 = s0.h;
    buf.c0 = s0.c;
    for (int t = 0; t < L; ++t) {
        const int id = tokens[static_cast<size_t>(t)];
        check_token(p, id);
        buf.ids[static_cast<size_t>(t)] = id;
        const auto x = p.embed.row(id).transpose();
        Eigen::Ref<const VecX<S>> h_prev =
            t > 0 ? Eigen::Ref<const VecX<S>>(buf.h.col(t - 1)) : Eigen::Ref<const VecX<S>>(buf.h0);
        Eigen::Ref<const VecX<S>> c_prev =
            t > 0 ? Eigen::Ref<const VecX<S>>(buf.c.col(t - 1)) : Eigen::Ref<const VecX<S>>(buf.c0);
        buf.u.col(t).noalias() = p.w_mx * x;
        buf.v.col(t).noalias() = p.w_mh * h_prev;
        buf.m.col(t) = buf.u.col(t).cwiseProduct(buf.v.col(t));
        const auto m = buf.m.col(t);
        buf.a.noalias() = p.w_hx * x;
        buf.a.noalias() += p.w_hm * m;
        buf.a += p.b_h;
        buf.hhat.col(t) = buf.a.array().tanh();
        buf.a.noalias() = p.w_ix * x;
        buf.a.noalias() += p.w_im * m;
        buf.a += p.b_i;
        buf.gi.col(t) = ((-buf.a.array()).exp() + S(1)).inverse();
        buf.a.noalias() = p.w_ox * x;
        buf.a.noalias() += p.w_om * m;
        buf.a += p.b_o;
        buf.go.col(t) = ((-buf.a.array()).exp() + S(1)).inverse();
        buf.a.noalias() = p.w_fx * x;
        buf.a.noalias() += p.w_fm * m;
        buf.a += p.b_f;
        buf.gf.col(t) = ((-buf.a.array()).exp() + S(1)).inverse();
        buf.c.col(t) = buf.gf.col(t).cwiseProduct(c_prev) +
                       buf.gi.col(t).cwiseProduct(buf.hhat.col(t));
        buf.tc.col(t) = buf.c.col(t).array().tanh();
        buf.h.col(t) = buf.go.col(t).cwiseProduct(buf.tc.col(t));
    }
    MlstmState<S> out;
    if (L > 0) {
        out.h = buf.h.col(L - 1);
        out.c = buf.c.col(L - 1);
    } else {
        out = {s0.h, s0.c};
    }
    return out;
}

template <class S>
void backward_steps(const MlstmParams<S>& p, BpttBuffers<S>& buf, const MatX<S>& dh_inject,
                    MlstmParams<S>& grads) {
    const int L = buf.len;
    auto& b = buf;
    b.carry_h.setZero();
    b.carry_c.setZero();
    for (int t = L - 1; t >= 0; --t) {
        const int id = buf.ids[static_cast<size_t>(t)];
        const auto x = p.embed.row(id).transpose();
        Eigen::Ref<const VecX<S>> h_prev =
            t > 0 ? Eigen::Ref<const VecX<S>>(buf.h.col(t - 1)) : Eigen::Ref<const VecX<S>>(buf.h0);
        Eigen::Ref<const VecX<S>> c_prev =
            t > 0 ? Eigen::Ref<const VecX<S>>(buf.c.col(t - 1)) : Eigen::Ref<const VecX<S>>(buf.c0);
        const auto gi = buf.gi.col(t), go = buf.go.col(t), gf = buf.gf.col(t);
        const auto hhat = buf.hhat.col(t), tc = buf.tc.col(t);

        b.d_h = dh_inject.col(t) + b.carry_h;
        b.da_o = b.d_h.array() * tc.array() * go.array() * (S(1) - go.array());
        b.d_c = (b.d_h.array() * go.array() * (S(1) - tc.array().square())).matrix() + b.carry_c;
        b.da_f = b.d_c.array() * c_prev.array() * gf.array() * (S(1) - gf.array());
        b.da_i = b.d_c.array() * hhat.array() * gi.array() * (S(1) - gi.array());
        b.da_h = b.d_c.array() * gi.array() * (S(1) - hhat.array().square());
        b.carry_c = b.d_c.cwiseProduct(gf);

        grads.w_hx.noalias() += b.da_h * x.transpose();
        grads.w_hm.noalias() += b.da_h * buf.m.col(t).transpose();
        grads.b_h += b.da_h;
        grads.w_ix.noalias() += b.da_i * x.transpose();
        grads.w_im.noalias() += b.da_i * buf.m.col(t).transpose();
        grads.b_i += b.da_i;
        grads.w_ox.noalias() += b.da_o * x.transpose();
        grads.w_om.noalias() += b.da_o * buf.m.col(t).transpose();
        grads.b_o += b.da_o;
        grads.w_fx.noalias() += b.da_f * x.transpose();
        grads.w_fm.noalias() += b.da_f * buf.m.col(t).transpose();
        grads.b_f += b.da_f;

        b.d_m.noalias() = p.w_hm.transpose() * b.da_h;
        b.d_m.noalias() += p.w_im.transpose() * b.da_i;
        b.d_m.noalias() += p.w_om.transpose() * b.da_o;
        b.d_m.noalias() += p.w_fm.transpose() * b.da_f;
        b.d_x.noalias() = p.w_hx.transpose() * b.da_h;
        b.d_x.noalias() += p.w_ix.transpose() * b.da_i;
        b.d_x.noalias() += p.w_ox.transpose() * b.da_o;
        b.d_x.noalias() += p.w_fx.transpose() * b.da_f;

        b.d_u = b.d_m.cwiseProduct(buf.v.col(t));
        b.d_v = b.d_m.cwiseProduct(buf.u.col(t));
        grads.w_mx.noalias() += b.d_u * x.transpose();
        b.d_x.noalias() += p.w_mx.transpose() * b.d_u;
        grads.w_mh.noalias() += b.d_v * h_prev.transpose();
        b.carry_h.noalias() = p.w_mh.transpose() * b.d_v;

        grads.embed.row(id) += b.d_x.transpose();
    }
}

template <class S>
ForwardBackwardResult<S> forward_backward(const MlstmParams<S>& p, const MlstmState<S>& s0,
                                          std::span<const int> tokens,
                                          std::span<const int> targets, MlstmParams<S>& grads,
                                          BpttBuffers<S>& buf) {
    const int L = static_cast<int>(tokens.size());
    if (L < 1) throw DataError("empty training window");
    if (targets.size() != tokens.size())
        throw DataError("targets length mismatch");

    MlstmState<S> final_state = forward_collect(p, s0, tokens, buf);

    buf.logits.leftCols(L).noalias() = p.w_y * buf.h.leftCols(L);
    buf.logits.leftCols(L).colwise() += p.b_y;

    const S scale = S(1) / static_cast<S>(L);
    S loss = 0;
    for (int t = 0; t < L; ++t) {
        const int target = targets[static_cast<size_t>(t)];
        check_token(p, target);
        const S lse = log_sum_exp<S>(buf.logits.col(t));
        loss += (lse - buf.logits(target, t)) * scale;
        buf.dlogits.col(t) = (buf.logits.col(t).array() - lse).exp() * scale;
        buf.dlogits(target, t) -= scale;
    }
    if (!std::isfinite(static_cast<double>(loss))) {
        int bad_t = 0;
        for (int t = 0; t < L; ++t)
            if (!buf.logits.col(t).allFinite()) {
                bad_t = t;
                break;
            }
        std::string tensor = "logits";
        p.all_finite(&tensor);
        throw NumericError("non-finite loss at window position " + std::to_string(bad_t) +
                           " (first non-finite tensor: " + tensor + ")");
    }

    grads.set_zero();
    grads.w_y.noalias() = buf.dlogits.leftCols(L) * buf.h.leftCols(L).transpose();
    grads.b_y = buf.dlogits.leftCols(L).rowwise().sum();
    buf.dh.leftCols(L).noalias() = p.w_y.transpose() * buf.dlogits.leftCols(L);
    backward_steps(p, buf, buf.dh, grads);
    return {loss, std::move(final_state)};
}

template <class S>
S forward_loss(const MlstmParams<S>& p, MlstmState<S>& state, std::span<const int> tokens,
               std::span<const int> targets) {
    if (tokens.size() != targets.size()) throw DataError("targets length mismatch");
    if (tokens.empty()) return 0;
    VecX<S> logits(p.dims.vocab);
    S loss = 0;
    for (size_t t = 0; t < tokens.size(); ++t) {
        forward_step(p, state, tokens[t], logits, nullptr);
        const int target = targets[t];
        check_token(p, target);
        loss += log_sum_exp<S>(logits) - logits[target];
    }
    loss /= static_cast<S>(tokens.size());
    if (!std::isfinite(static_cast<double>(loss)))
        throw NumericError("non-finite evaluation loss");
    return loss;
}

template <class S>
void AdamState<S>::update(MlstmParams<S>& params, const MlstmParams<S>& grads, S lr) {
    ++step;
    const S bc1 = S(1) - std::pow(beta1, static_cast<S>(step));
    const S bc2 = S(1) - std::pow(beta2, static_cast<S>(step));
    auto pf = params.flat();
    auto gf = grads.flat();
    auto mf = m.flat();
    auto vf = v.flat();
    for (size_t k = 0; k < static_cast<size_t>(kNumParamTensors); ++k) {
        mf[k] = beta1 * mf[k] + (S(1) - beta1) * gf[k];
        vf[k].array() = beta2 * vf[k].array() + (S(1) - beta2) * gf[k].array().square();
        pf[k].array() -=
            lr * (mf[k].array() / bc1) / ((vf[k].array() / bc2).sqrt() + eps);
    }
}

template <class S>
std::vector<int> sample(const MlstmParams<S>& p, std::span<const int> seed_tokens, int max_new,
                        double temperature, Rng& rng, const CellOffsets* offsets, int end_token) {
    if (seed_tokens.empty()) throw DataError("sampling requires at least one seed token");
    if (max_new < 1) throw DataError("sample length must be >= 1");
    auto state = MlstmState<S>::zero(p.dims.hidden);
    VecX<S> logits(p.dims.vocab);
    for (int id : seed_tokens) forward_step(p, state, id, logits, offsets);

    std::vector<int> out;
    out.reserve(static_cast<size_t>(max_new));
    VecX<double> probs(p.dims.vocab);
    for (int i = 0; i < max_new; ++i) {
        int id;
        if (temperature <= 0.0) {
            Eigen::Index arg;
            logits.maxCoeff(&arg);
            id = static_cast<int>(arg);
        } else {
            probs = logits.template cast<double>() / temperature;
            probs.array() -= probs.maxCoeff();
            probs = probs.array().exp();
            const double total = probs.sum();
            double u = rng.uniform() * total;
            id = p.dims.vocab - 1;
            for (Eigen::Index k = 0; k < probs.size(); ++k) {
                u -= probs[k];
                if (u <= 0) {
                    id = static_cast<int>(k);
                    break;
                }
            }
        }
        out.push_back(id);
        if (id == end_token) break;
        forward_step(p, state, id, logits, offsets);
    }
    return out;
}

// --------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void write_u32le(std::ostream& out, uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                          static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32le(std::istream& in) {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("corrupt container: truncated header length");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

constexpr char kMagic[8] = {'V', 'M', 'L', 'S', 'T', 'M', '0', '1'};

}  // namespace

void save_checkpoint(std::ostream& out, const MlstmParams<float>& params,
                     const CheckpointHeader& header,
                     const std::vector<std::pair<std::string, const MatX<float>*>>& extra) {
    std::vector<std::pair<std::string, const float*>> payload;
    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    auto add = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                   const float* data) {
        const uint64_t bytes = static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) * 4;
        manifest.push_back({{"name", name},
                            {"rows", rows},
                            {"cols", cols},
                            {"offset", offset},
                            {"bytes", bytes}});
        payload.emplace_back(name, data);
        offset += bytes;
    };
    params.for_each_tensor(
        [&](const char* name, const auto& t) { add(name, t.rows(), t.cols(), t.data()); });
    for (const auto& [name, mat] : extra) add(name, mat->rows(), mat->cols(), mat->data());

    nlohmann::json hdr = {
        {"version", header.version},
        {"dims",
         {{"vocab", params.dims.vocab}, {"embed", params.dims.embed},
          {"hidden", params.dims.hidden}}},
        {"vocab_hash", hex_u64(header.vocab_hash)},
        {"model", header.model_kind},
        {"hyper", header.hyper},
        {"layout", "col-major-f32le"},
        {"tensors", manifest},
    };
    const std::string hdr_str = hdr.dump();

    out.write(kMagic, 8);
    write_u32le(out, static_cast<uint32_t>(hdr_str.size()));
    out.write(hdr_str.data(), static_cast<std::streamsize>(hdr_str.size()));
    size_t k = 0;
    for (const auto& entry : manifest) {
        const uint64_t bytes = entry.at("bytes").get<uint64_t>();
        out.write(reinterpret_cast<const char*>(payload[k].second),
                  static_cast<std::streamsize>(bytes));
        ++k;
    }
    if (!out) throw DataError("checkpoint write failed");
}

LoadedCheckpoint load_checkpoint(std::istream& in, std::optional<uint64_t> expected_vocab_hash) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("corrupt container: bad magic");
    const uint32_t hdr_len = read_u32le(in);
    std::string hdr_str(hdr_len, '\0');
    in.read(hdr_str.data(), hdr_len);
    if (!in) throw DataError("corrupt container: truncated header");

    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(hdr_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt container: bad header json: ") + e.what());
    }

    LoadedCheckpoint result;
    try {
        result.header.version = hdr.at("version").get<int>();
        if (result.header.version != 1)
            throw DataError("checkpoint version mismatch: " +
                            std::to_string(result.header.version));
        result.header.dims.vocab = hdr.at("dims").at("vocab").get<int>();
        result.header.dims.embed = hdr.at("dims").at("embed").get<int>();
        result.header.dims.hidden = hdr.at("dims").at("hidden").get<int>();
        result.header.vocab_hash = parse_hex_u64(hdr.at("vocab_hash").get<std::string>());
        result.header.model_kind = hdr.at("model").get<std::string>();
        result.header.hyper = hdr.value("hyper", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt container: incomplete header: ") + e.what());
    }
    if (expected_vocab_hash && *expected_vocab_hash != result.header.vocab_hash)
        throw DataError("vocab hash mismatch: checkpoint was built against a different vocabulary");

    result.params = MlstmParams<float>::zeros(result.header.dims);
    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> expected_shapes;
    std::map<std::string, float*> slots;
    result.params.for_each_tensor([&](const char* name, auto& t) {
        expected_shapes[name] = {t.rows(), t.cols()};
        slots[name] = t.data();
    });

    uint64_t cursor = 0;
    std::vector<char> seen;
    size_t core_seen = 0;
    for (const auto& entry : hdr.at("tensors")) {
        std::string name;
        Eigen::Index rows, cols;
        uint64_t offset, bytes;
        try {
            name = entry.at("name").get<std::string>();
            rows = entry.at("rows").get<Eigen::Index>();
            cols = entry.at("cols").get<Eigen::Index>();
            offset = entry.at("offset").get<uint64_t>();
            bytes = entry.at("bytes").get<uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("corrupt container: bad manifest entry: ") + e.what());
        }
        if (offset != cursor || bytes != static_cast<uint64_t>(rows) * cols * 4)
            throw DataError("corrupt container: inconsistent manifest for tensor " + name);
        auto slot = slots.find(name);
        if (slot != slots.end()) {
            const auto [er, ec] = expected_shapes[name];
            if (er != rows || ec != cols)
                throw DataError("corrupt container: tensor shape mismatch for " + name);
            in.read(reinterpret_cast<char*>(slot->second), static_cast<std::streamsize>(bytes));
            if (!in) throw DataError("corrupt container: truncated tensor " + name);
            ++core_seen;
        } else {
            MatX<float> mat(rows, cols);
            in.read(reinterpret_cast<char*>(mat.data()), static_cast<std::streamsize>(bytes));
            if (!in) throw DataError("corrupt container: truncated tensor " + name);
            result.extra.emplace(name, std::move(mat));
        }
        cursor += bytes;
    }
    if (core_seen != kNumParamTensors)
        throw DataError("corrupt container: missing model tensors");
    return result;
}

void save_checkpoint_file(const std::string& path, const MlstmParams<float>& params,
                          const CheckpointHeader& header,
                          const std::vector<std::pair<std::string, const MatX<float>*>>& extra) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    save_checkpoint(out, params, header, extra);
}

LoadedCheckpoint load_checkpoint_file(const std::string& path,
                                      std::optional<uint64_t> expected_vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    return load_checkpoint(in, expected_vocab_hash);
}

// Explicit instantiations: float for the training pipeline, double for
// gradient checking.
template struct MlstmParams<float>;
template struct MlstmParams<double>;
template struct BpttBuffers<float>;
template struct BpttBuffers<double>;
template struct AdamState<float>;
template struct AdamState<double>;

template void forward_step<float>(const MlstmParams<float>&, MlstmState<float>&, int,
                                  VecX<float>&, const CellOffsets*);
template void forward_step<double>(const MlstmParams<double>&, MlstmState<double>&, int,
                                   VecX<double>&, const CellOffsets*);
template void advance<float>(const MlstmParams<float>&, MlstmState<float>&, std::span<const int>,
                             const CellOffsets*);
template void advance<double>(const MlstmParams<double>&, MlstmState<double>&,
                              std::span<const int>, const CellOffsets*);
template VecX<float> final_cell_state<float>(const MlstmParams<float>&, std::span<const int>);
template VecX<double> final_cell_state<double>(const MlstmParams<double>&, std::span<const int>);
template MlstmState<float> forward_collect<float>(const MlstmParams<float>&,
                                                  const MlstmState<float>&, std::span<const int>,
                                                  BpttBuffers<float>&);
template MlstmState<double> forward_collect<double>(const MlstmParams<double>&,
                                                    const MlstmState<double>&,
                                                    std::span<const int>, BpttBuffers<double>&);
template void backward_steps<float>(const MlstmParams<float>&, BpttBuffers<float>&,
                                    const MatX<float>&, MlstmParams<float>&);
template void backward_steps<double>(const MlstmParams<double>&, BpttBuffers<double>&,
                                     const MatX<double>&, MlstmParams<double>&);
template ForwardBackwardResult<float> forward_backward<float>(
    const MlstmParams<float>&, const MlstmState<float>&, std::span<const int>,
    std::span<const int>, MlstmParams<float>&, BpttBuffers<float>&);
template ForwardBackwardResult<double> forward_backward<double>(
    const MlstmParams<double>&, const MlstmState<double>&, std::span<const int>,
    std::span<const int>, MlstmParams<double>&, BpttBuffers<double>&);
template float forward_loss<float>(const MlstmParams<float>&, MlstmState<float>&,
                                   std::span<const int>, std::span<const int>);
template double forward_loss<double>(const MlstmParams<double>&, MlstmState<double>&,
                                     std::span<const int>, std::span<const int>);
template std::vector<int> sample<float>(const MlstmParams<float>&, std::span<const int>, int,
                                        double, Rng&, const CellOffsets*, int);
template std::vector<int> sample<double>(const MlstmParams<double>&, std::span<const int>, int,
                                         double, Rng&, const CellOffsets*, int);

}  // namespace sentimidi
