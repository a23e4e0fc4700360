#pragma once

// Segmental evaluation: F1@k with greedy IoU matching, normalized edit
// score over segment label sequences, frame-wise accuracy, and the
// split-level report (F1 counts and frames pooled across videos, edit
// averaged per video; the pooled edit variant is reported alongside).

#include <string>
#include <vector>

#include "dxf/common.hpp"

namespace dxf::metrics {

struct Segment {
    int label;
    int start;  // inclusive
    int end;    // exclusive
    bool operator==(const Segment&) const = default;
};

std::vector<Segment> labels_to_segments(const std::vector<int>& labels);
std::vector<int> segments_to_labels(const std::vector<Segment>& segs);

double iou(const Segment& a, const Segment& b);

struct F1Counts {
    long long tp = 0;
    long long num_pred = 0;
    long long num_gt = 0;

    F1Counts& operator+=(const F1Counts& o) {
        tp += o.tp;
        num_pred += o.num_pred;
        num_gt += o.num_gt;
        return *this;
    }
};

// Greedy matching: each predicted segment, in temporal order, is matched
// to the same-label ground-truth segment of highest IoU; true positive
// iff that IoU > threshold and the ground-truth segment is unused.
F1Counts f1_counts(const std::vector<int>& pred, const std::vector<int>& gt, double threshold);

struct PRF {
    double precision = 0;  // percentages in [0, 100]
    double recall = 0;
    double f1 = 0;
};

PRF prf_from_counts(const F1Counts& c);
PRF f1_at_k(const std::vector<int>& pred, const std::vector<int>& gt, int k);

double edit_score(const std::vector<int>& pred, const std::vector<int>& gt);
double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt);

struct MetricsReport {
    double f1_10 = 0, f1_25 = 0, f1_50 = 0;
    double edit = 0;  // per-video mean
    double acc = 0;   // pooled frames
    double edit_pooled = 0;
    long long num_videos = 0;
};

MetricsReport compute_report(const std::vector<std::vector<int>>& preds,
                             const std::vector<std::vector<int>>& gts);

// One metric per line, "name=value" with two decimals.
std::string format_report(const MetricsReport& r);

}  // namespace dxf::metrics
