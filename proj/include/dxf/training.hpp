#pragma once

// Loss, Adam, training loop and evaluation driver. One sample is
// processed at a time; batch gradients are summed in sample order and
// averaged before the optimizer step, so runs are bitwise reproducible
// for a fixed (seed, config, dataset).

#include <ostream>
#include <vector>

#include "dxf/data_io.hpp"
#include "dxf/graph.hpp"
#include "dxf/metrics.hpp"
#include "dxf/model.hpp"

namespace dxf {

struct TrainConfig {
    double learning_rate = 0.0005;  // small preset; large preset uses 0.001
    int batch_size = 1;             // large preset uses 8
    int epochs = 50;
    double lambda_smooth = 0.15;
    double tau_clip = 4.0;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;  // epochs; 0 = only at end
    int workers = 1;

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (lambda_smooth < 0) throw ConfigError("lambda_smooth must be >= 0");
        if (tau_clip <= 0) throw ConfigError("tau_clip must be > 0");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        if (workers < 0) throw ConfigError("workers must be >= 0");
    }

    static TrainConfig preset_small() { return TrainConfig{}; }

    static TrainConfig preset_large() {
        TrainConfig c;
        c.learning_rate = 0.001;
        c.batch_size = 8;
        return c;
    }
};

// Sum over stages of mean frame cross-entropy plus lambda * truncated MSE
// between consecutive frames' log-probabilities (previous frame
// gradient-stopped, squared differences clipped at tau^2, mean over
// classes and frame pairs). Padded frames are excluded throughout.
template <typename S>
int seg_loss(Graph<S>& g, const std::vector<int>& stage_logits, const std::vector<int>& labels,
             const std::vector<uint8_t>& mask, S lambda, S tau) {
    if (stage_logits.empty()) throw ConfigError("seg_loss: no stages");
    int total = -1;
    for (int logits : stage_logits) {
        int logp = ops::log_softmax_cols(g, logits);
        int term = ops::nll_pick(g, logp, labels, mask);
        if (lambda > S(0)) {
            int sm = ops::smoothing_penalty(g, logp, mask, tau);
            term = ops::add(g, term, ops::scale(g, sm, lambda));
        }
        total = total < 0 ? term : ops::add(g, total, term);
    }
    return total;
}

template <typename S>
struct AdamState {
    std::vector<Tensor<S>> m, v;  // parallel to the parameter list
    long long step = 0;
    S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);

    static AdamState init(const ParameterSet<S>& ps) {
        AdamState st;
        for (const auto& t : ps.values) {
            st.m.push_back(Tensor<S>::zeros(t.shape));
            st.v.push_back(Tensor<S>::zeros(t.shape));
        }
        return st;
    }
};

// Bias-corrected Adam update from the gradients accumulated in
// ParameterSet::values[i].grad.
template <typename S>
void adam_step(ParameterSet<S>& params, AdamState<S>& st, S lr) {
    if (st.m.size() != params.values.size()) throw ConfigError("adam_step: state does not match parameters");
    ++st.step;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(st.beta1), static_cast<double>(st.step)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(st.beta2), static_cast<double>(st.step)));
    for (size_t i = 0; i < params.values.size(); ++i) {
        auto& p = params.values[i];
        p.ensure_grad();
        auto& m = st.m[i].data;
        auto& v = st.v[i].data;
        for (size_t j = 0; j < p.data.size(); ++j) {
            const S gval = p.grad[j];
            if (!std::isfinite(static_cast<double>(gval)))
                throw TrainError("non-finite gradient in parameter " + params.names[i] +
                                 " at element " + std::to_string(j));
            m[j] = st.beta1 * m[j] + (S(1) - st.beta1) * gval;
            v[j] = st.beta2 * v[j] + (S(1) - st.beta2) * gval * gval;
            const S mhat = m[j] / bc1;
            const S vhat = v[j] / bc2;
            p.data[j] -= lr * mhat / (static_cast<S>(std::sqrt(static_cast<double>(vhat))) + st.eps);
        }
    }
}

struct EpochLog {
    int epoch = 0;
    double loss = 0;
    double train_acc = 0;
    long long step = 0;
};

struct TrainResult {
    io::Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

namespace detail {

inline void validate_dataset(const std::vector<io::SegmentationSample>& dataset,
                             const ModelConfig& cfg) {
    if (dataset.empty()) throw DataError("empty dataset");
    std::string offenders;
    for (const auto& s : dataset) {
        if (s.features.shape[0] != cfg.input_dim)
            offenders += " " + s.id + " (D=" + std::to_string(s.features.shape[0]) + ")";
        for (int l : s.labels)
            if (l < 0 || l >= cfg.num_classes) {
                offenders += " " + s.id + " (label " + std::to_string(l) + ")";
                break;
            }
    }
    if (!offenders.empty())
        throw DataError("dataset does not match model config (D=" + std::to_string(cfg.input_dim) +
                        ", C=" + std::to_string(cfg.num_classes) + "):" + offenders);
}

inline void fisher_yates(std::vector<int>& order, std::mt19937_64& rng) {
    for (size_t i = order.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
}

}  // namespace detail

// Runs forward/backward on one sample and accumulates parameter grads.
// Returns (loss value, #correct frames).
inline std::pair<double, long long> train_step_sample(const ModelConfig& mcfg,
                                                      const TrainConfig& tcfg,
                                                      ParameterSet<float>& params,
                                                      const io::SegmentationSample& s) {
    Graph<float> g;
    auto bm = bind_params(g, mcfg, params);
    const int T = s.features.shape[1];
    std::vector<uint8_t> mask(static_cast<size_t>(T), 1);
    int x = g.constant(s.features);
    auto stages = dxformer_forward(bm, x, mask);
    std::vector<int> logits;
    for (const auto& st : stages) logits.push_back(st.logits);
    int loss = seg_loss(g, logits, s.labels, mask, static_cast<float>(tcfg.lambda_smooth),
                        static_cast<float>(tcfg.tau_clip));
    g.backward(loss);
    accumulate_grads(bm, params);
    auto pred = argmax_cols(g, stages.back().logits);
    long long correct = 0;
    for (int t = 0; t < T; ++t)
        if (pred[static_cast<size_t>(t)] == s.labels[static_cast<size_t>(t)]) ++correct;
    return {static_cast<double>(g.val(loss)[0]), correct};
}

inline io::Checkpoint make_checkpoint(const ModelConfig& mcfg, const ParameterSet<float>& params,
                                      const AdamState<float>& st, int epoch) {
    io::Checkpoint ck;
    ck.cfg = mcfg;
    ck.params.names = params.names;
    ck.params.index = params.index;
    for (const auto& t : params.values) ck.params.values.push_back(Tensor<float>(t.shape, t.data));
    ck.has_opt = true;
    ck.adam_m = st.m;
    ck.adam_v = st.v;
    ck.step = st.step;
    ck.epoch = epoch;
    return ck;
}

inline TrainResult train(const std::vector<io::SegmentationSample>& dataset,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::string& checkpoint_path = "",
                         std::ostream* log_stream = nullptr,
                         const io::Checkpoint* resume = nullptr) {
    mcfg.validate();
    tcfg.validate();
    detail::validate_dataset(dataset, mcfg);
    kernels::set_num_threads(tcfg.workers);

    ParameterSet<float> params = resume ? resume->params : init_params<float>(mcfg);
    AdamState<float> st = AdamState<float>::init(params);
    int start_epoch = 0;
    if (resume) {
        if (!resume->has_opt) throw ConfigError("resume checkpoint lacks optimizer state");
        st.m = resume->adam_m;
        st.v = resume->adam_v;
        st.step = resume->step;
        start_epoch = resume->epoch;
    }

    TrainResult result;
    const int n = static_cast<int>(dataset.size());
    for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        std::mt19937_64 rng(tcfg.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1));
        detail::fisher_yates(order, rng);

        double loss_sum = 0;
        long long correct = 0, frames = 0;
        for (int b = 0; b < n; b += tcfg.batch_size) {
            const int bend = std::min(n, b + tcfg.batch_size);
            params.zero_grads();
            for (int i = b; i < bend; ++i) {
                const auto& s = dataset[static_cast<size_t>(order[static_cast<size_t>(i)])];
                auto [lv, c] = train_step_sample(mcfg, tcfg, params, s);
                loss_sum += lv;
                correct += c;
                frames += s.features.shape[1];
            }
            const float inv = 1.0f / static_cast<float>(bend - b);
            for (auto& p : params.values)
                for (auto& gv : p.grad) gv *= inv;
            adam_step(params, st, static_cast<float>(tcfg.learning_rate));
        }

        EpochLog el{epoch, loss_sum / n, 100.0 * static_cast<double>(correct) / static_cast<double>(frames),
                    st.step};
        result.log.push_back(el);
        if (log_stream)
            (*log_stream) << "epoch=" << el.epoch << " loss=" << el.loss << " train_acc=" << el.train_acc
                          << " step=" << el.step << "\n";
        if (!checkpoint_path.empty() && tcfg.checkpoint_every > 0 &&
            (epoch + 1 - start_epoch) % tcfg.checkpoint_every == 0)
            io::save_checkpoint(checkpoint_path, make_checkpoint(mcfg, params, st, epoch + 1));
    }
    result.checkpoint = make_checkpoint(mcfg, params, st, tcfg.epochs);
    if (!checkpoint_path.empty()) io::save_checkpoint(checkpoint_path, result.checkpoint);
    return result;
}

inline std::vector<int> predict_labels(const io::Checkpoint& ck, const Tensor<float>& features) {
    if (features.shape[0] != ck.cfg.input_dim)
        throw ConfigError("predict: features D=" + std::to_string(features.shape[0]) +
                          " but checkpoint expects D=" + std::to_string(ck.cfg.input_dim));
    Graph<float> g;
    ModelConfig cfg = ck.cfg;
    auto bm = bind_params(g, cfg, ck.params, false);
    std::vector<uint8_t> mask(static_cast<size_t>(features.shape[1]), 1);
    int x = g.constant(features);
    auto stages = dxformer_forward(bm, x, mask);
    return argmax_cols(g, stages.back().logits);
}

inline metrics::MetricsReport evaluate(const std::vector<io::SegmentationSample>& dataset,
                                       const io::Checkpoint& ck) {
    for (const auto& s : dataset)
        if (s.features.shape[0] != ck.cfg.input_dim)
            throw ConfigError("evaluate: sample " + s.id + " has D=" + std::to_string(s.features.shape[0]) +
                              " but checkpoint expects D=" + std::to_string(ck.cfg.input_dim));
    detail::validate_dataset(dataset, ck.cfg);
    std::vector<std::vector<int>> preds, gts;
    for (const auto& s : dataset) {
        preds.push_back(predict_labels(ck, s.features));
        gts.push_back(s.labels);
    }
    return metrics::compute_report(preds, gts);
}

}  // namespace dxf
