#pragma once

// Central-difference gradient checker, 64-bit only. The numeric side is
// intentionally independent of the backward pass: it re-evaluates the
// builder forward-only at perturbed inputs.

#include <functional>
#include <vector>

#include "dxf/graph.hpp"

namespace dxf {

// Builds a scalar loss from a graph and the bound leaf ids (one per input
// tensor, in order).
using LossBuilder = std::function<int(Graph<double>&, const std::vector<int>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor<double>>& leaves) {
    Graph<double> g;
    std::vector<int> ids;
    ids.reserve(leaves.size());
    for (const auto& t : leaves) ids.push_back(g.leaf(t, false));
    int loss = build(g, ids);
    if (g.val(loss).size() != 1) throw ShapeError("grad_check: loss must be scalar");
    return g.val(loss)[0];
}

// Returns max over all coordinates of all leaves of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const LossBuilder& build, const std::vector<Tensor<double>>& leaves,
                         double eps = 1e-5) {
    Graph<double> g;
    std::vector<int> ids;
    ids.reserve(leaves.size());
    for (const auto& t : leaves) ids.push_back(g.leaf(t, true));
    int loss = build(g, ids);
    if (g.val(loss).size() != 1) throw ShapeError("grad_check: loss must be scalar");
    g.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (int id : ids) analytic.push_back(g.grad(id));

    double worst = 0.0;
    std::vector<Tensor<double>> work = leaves;
    for (size_t li = 0; li < work.size(); ++li) {
        for (size_t i = 0; i < work[li].data.size(); ++i) {
            const double orig = work[li].data[i];
            work[li].data[i] = orig + eps;
            const double fp = eval_loss(build, work);
            work[li].data[i] = orig - eps;
            const double fm = eval_loss(build, work);
            work[li].data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[li][i];
            if (!std::isfinite(numeric) || !std::isfinite(a))
                throw TrainError("grad_check: non-finite value at leaf " + std::to_string(li) +
                                 " coordinate " + std::to_string(i));
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Single-input convenience form matching f: Tensor -> scalar.
inline double grad_check(const std::function<int(Graph<double>&, int)>& f, const Tensor<double>& x,
                         double eps = 1e-5) {
    return grad_check([&f](Graph<double>& g, const std::vector<int>& ids) { return f(g, ids[0]); },
                      {x}, eps);
}

}  // namespace dxf
