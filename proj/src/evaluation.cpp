#include "fundus/evaluation.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace fundus::evaluation {

ConfusionMatrix::ConfusionMatrix(int k_) : k(k_) {
    if (k_ < 2) throw InvalidInput("confusion matrix needs at least two grades");
    counts.assign(static_cast<std::size_t>(k_), std::vector<std::int64_t>(static_cast<std::size_t>(k_), 0));
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (const auto& row : counts) {
        for (auto c : row) t += c;
    }
    return t;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
    ConfusionMatrix t(k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            t.counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
                counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return t;
}

double quadratic_weighted_kappa(const ConfusionMatrix& m) {
    const auto k = static_cast<std::size_t>(m.k);
    if (m.k < 2 || m.counts.size() != k) throw InvalidInput("confusion matrix shape does not match k");
    for (const auto& row : m.counts) {
        if (row.size() != k) throw InvalidInput("confusion matrix shape does not match k");
        for (auto c : row) {
            if (c < 0) throw InvalidInput("confusion counts must be non-negative");
        }
    }
    const double n = static_cast<double>(m.total());
    if (n <= 0.0) throw InvalidInput("confusion matrix is empty");

    std::vector<double> rows(k, 0.0), cols(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            rows[i] += static_cast<double>(m.counts[i][j]);
            cols[j] += static_cast<double>(m.counts[i][j]);
        }
    }
    const double span = static_cast<double>((k - 1) * (k - 1));
    double observed = 0.0;
    double expected = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double d = static_cast<double>(i) - static_cast<double>(j);
            const double w = d * d / span;
            observed += w * static_cast<double>(m.counts[i][j]) / n;
            expected += w * (rows[i] / n) * (cols[j] / n);
        }
    }
    if (expected == 0.0) throw DegenerateAgreement("expected weighted disagreement is zero");
    return 1.0 - observed / expected;
}

ConfusionMatrix confusion_from_grades(const std::vector<int>& reference, const std::vector<int>& predicted, int k) {
    if (reference.size() != predicted.size()) {
        throw InvalidInput("grade lists differ in length: " + std::to_string(reference.size()) + " vs " +
                           std::to_string(predicted.size()));
    }
    ConfusionMatrix m(k);
    for (std::size_t c = 0; c < reference.size(); ++c) {
        const int a = reference[c];
        const int b = predicted[c];
        if (a < 0 || a >= k || b < 0 || b >= k) throw InvalidInput("grade out of range at case " + std::to_string(c));
        ++m.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
    return m;
}

DetectionScore make_score(std::size_t tp, std::size_t fp, std::size_t fn) {
    DetectionScore s{tp, fp, fn};
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

DetectionScore match_regions(const std::vector<Region>& predicted, const std::vector<Region>& truth, double min_iou) {
    auto key = [](const morphology::Point& p) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.y)) << 32) | static_cast<std::uint32_t>(p.x);
    };
    // pixel -> truth indices covering it
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> owners;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        for (const auto& p : truth[t].pixels) owners[key(p)].push_back(t);
    }

    struct Pair {
        std::size_t overlap;
        std::size_t p;
        std::size_t t;
    };
    std::vector<Pair> pairs;
    for (std::size_t pi = 0; pi < predicted.size(); ++pi) {
        const auto& pr = predicted[pi];
        std::unordered_map<std::size_t, std::size_t> overlap;
        for (const auto& p : pr.pixels) {
            if (auto it = owners.find(key(p)); it != owners.end()) {
                for (auto t : it->second) ++overlap[t];
            }
        }
        const morphology::Point c{static_cast<int>(std::lround(pr.cx)), static_cast<int>(std::lround(pr.cy))};
        std::vector<std::size_t> centroid_in;
        if (auto it = owners.find(key(c)); it != owners.end()) centroid_in = it->second;
        for (std::size_t t = 0; t < truth.size(); ++t) {
            const std::size_t ov = overlap.count(t) ? overlap[t] : 0;
            const bool inside = std::find(centroid_in.begin(), centroid_in.end(), t) != centroid_in.end();
            const double uni = static_cast<double>(pr.pixels.size() + truth[t].pixels.size() - ov);
            const double iou = uni > 0.0 ? static_cast<double>(ov) / uni : 0.0;
            if (inside || (ov > 0 && iou >= min_iou)) pairs.push_back({ov, pi, t});
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        return std::tie(b.overlap, a.p, a.t) < std::tie(a.overlap, b.p, b.t);
    });
    std::vector<bool> used_p(predicted.size(), false), used_t(truth.size(), false);
    std::size_t tp = 0;
    for (const auto& pr : pairs) {
        if (used_p[pr.p] || used_t[pr.t]) continue;
        used_p[pr.p] = used_t[pr.t] = true;
        ++tp;
    }
    return make_score(tp, predicted.size() - tp, truth.size() - tp);
}

DetectionScore pixel_scores(const Mask& predicted, const Mask& truth, const Mask& roi) {
    if (predicted.width() != truth.width() || predicted.height() != truth.height() ||
        roi.width() != truth.width() || roi.height() != truth.height()) {
        throw InvalidInput("mask size mismatch");
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < roi.pixel_count(); ++i) {
        if (!roi[i]) continue;
        const bool p = predicted[i];
        const bool t = truth[i];
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    return make_score(tp, fp, fn);
}

std::string format_confusion(const ConfusionMatrix& m) {
    std::ostringstream os;
    os << "ref\\alg";
    for (int j = 0; j < m.k; ++j) os << '\t' << j;
    os << '\n';
    for (int i = 0; i < m.k; ++i) {
        os << i;
        for (int j = 0; j < m.k; ++j) os << '\t' << m.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        os << '\n';
    }
    return os.str();
}

} // namespace fundus::evaluation
