#include "dxf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace dxf::metrics {

std::vector<Segment> labels_to_segments(const std::vector<int>& labels) {
    std::vector<Segment> segs;
    const int T = static_cast<int>(labels.size());
    int start = 0;
    for (int t = 1; t <= T; ++t) {
        if (t == T || labels[static_cast<size_t>(t)] != labels[static_cast<size_t>(start)]) {
            segs.push_back({labels[static_cast<size_t>(start)], start, t});
            start = t;
        }
    }
    return segs;
}

std::vector<int> segments_to_labels(const std::vector<Segment>& segs) {
    std::vector<int> out;
    for (const auto& s : segs)
        for (int t = s.start; t < s.end; ++t) out.push_back(s.label);
    return out;
}

double iou(const Segment& a, const Segment& b) {
    const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const int uni = std::max(a.end, b.end) - std::min(a.start, b.start);
    return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

F1Counts f1_counts(const std::vector<int>& pred, const std::vector<int>& gt, double threshold) {
    if (pred.size() != gt.size())
        throw ShapeError("f1_counts: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()));
    auto ps = labels_to_segments(pred);
    auto gs = labels_to_segments(gt);
    F1Counts c;
    c.num_pred = static_cast<long long>(ps.size());
    c.num_gt = static_cast<long long>(gs.size());
    std::vector<bool> used(gs.size(), false);
    for (const auto& p : ps) {
        double best = -1.0;
        int best_idx = -1;
        for (size_t j = 0; j < gs.size(); ++j) {
            double v = gs[j].label == p.label ? iou(p, gs[j]) : 0.0;
            if (v > best) {
                best = v;
                best_idx = static_cast<int>(j);
            }
        }
        if (best_idx >= 0 && best > threshold && !used[static_cast<size_t>(best_idx)]) {
            used[static_cast<size_t>(best_idx)] = true;
            ++c.tp;
        }
    }
    return c;
}

PRF prf_from_counts(const F1Counts& c) {
    PRF r;
    r.precision = c.num_pred > 0 ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.num_pred) : 0.0;
    r.recall = c.num_gt > 0 ? 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.num_gt) : 0.0;
    r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

PRF f1_at_k(const std::vector<int>& pred, const std::vector<int>& gt, int k) {
    return prf_from_counts(f1_counts(pred, gt, k / 100.0));
}

static int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    const size_t m = a.size(), n = b.size();
    std::vector<int> prev(n + 1), cur(n + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (size_t i = 1; i <= m; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= n; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double edit_score(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw ShapeError("edit_score: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()));
    auto ps = labels_to_segments(pred);
    auto gs = labels_to_segments(gt);
    std::vector<int> pl, gl;
    for (const auto& s : ps) pl.push_back(s.label);
    for (const auto& s : gs) gl.push_back(s.label);
    const size_t denom = std::max(pl.size(), gl.size());
    if (denom == 0) return 100.0;
    double score = 100.0 * (1.0 - static_cast<double>(levenshtein(pl, gl)) / static_cast<double>(denom));
    return std::max(0.0, score);
}

double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw ShapeError("frame_accuracy: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()));
    if (pred.empty()) throw ShapeError("frame_accuracy: empty sequence");
    long long eq = 0;
    for (size_t t = 0; t < pred.size(); ++t)
        if (pred[t] == gt[t]) ++eq;
    return 100.0 * static_cast<double>(eq) / static_cast<double>(pred.size());
}

MetricsReport compute_report(const std::vector<std::vector<int>>& preds,
                             const std::vector<std::vector<int>>& gts) {
    if (preds.size() != gts.size()) throw ShapeError("compute_report: pred/gt video counts differ");
    if (preds.empty()) throw ShapeError("compute_report: no videos");
    MetricsReport r;
    r.num_videos = static_cast<long long>(preds.size());
    const double thrs[3] = {0.10, 0.25, 0.50};
    F1Counts pooled[3];
    long long frames_eq = 0, frames_total = 0;
    double edit_sum = 0;
    double dist_sum = 0, denom_sum = 0;
    for (size_t v = 0; v < preds.size(); ++v) {
        for (int i = 0; i < 3; ++i) pooled[i] += f1_counts(preds[v], gts[v], thrs[i]);
        for (size_t t = 0; t < preds[v].size(); ++t)
            if (preds[v][t] == gts[v][t]) ++frames_eq;
        frames_total += static_cast<long long>(preds[v].size());
        edit_sum += edit_score(preds[v], gts[v]);
        auto ps = labels_to_segments(preds[v]);
        auto gs = labels_to_segments(gts[v]);
        std::vector<int> pl, gl;
        for (const auto& s : ps) pl.push_back(s.label);
        for (const auto& s : gs) gl.push_back(s.label);
        dist_sum += static_cast<double>(levenshtein(pl, gl));
        denom_sum += static_cast<double>(std::max(pl.size(), gl.size()));
    }
    r.f1_10 = prf_from_counts(pooled[0]).f1;
    r.f1_25 = prf_from_counts(pooled[1]).f1;
    r.f1_50 = prf_from_counts(pooled[2]).f1;
    r.acc = frames_total > 0 ? 100.0 * static_cast<double>(frames_eq) / static_cast<double>(frames_total) : 0.0;
    r.edit = edit_sum / static_cast<double>(preds.size());
    r.edit_pooled = denom_sum > 0 ? std::max(0.0, 100.0 * (1.0 - dist_sum / denom_sum)) : 100.0;
    return r;
}

std::string format_report(const MetricsReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "f1_10=%.2f\nf1_25=%.2f\nf1_50=%.2f\nedit=%.2f\nacc=%.2f\nedit_mode=per_video_mean\n"
                  "edit_pooled=%.2f\nnum_videos=%lld\n",
                  r.f1_10, r.f1_25, r.f1_50, r.edit, r.acc, r.edit_pooled, r.num_videos);
    return std::string(buf);
}

}  // namespace dxf::metrics
