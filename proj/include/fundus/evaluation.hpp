#pragma once

#include "fundus/morphology.hpp"
#include "fundus/raster.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fundus::evaluation {

using morphology::Region;

/// Rows are the reference rater, columns the algorithm.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::vector<std::int64_t>> counts;

    explicit ConfusionMatrix(int k = 2);
    std::int64_t total() const;
    ConfusionMatrix transposed() const;
};

/// Throws DegenerateAgreement when the expected weighted disagreement is zero and InvalidInput
/// when the matrix is malformed or empty.
double quadratic_weighted_kappa(const ConfusionMatrix& m);

ConfusionMatrix confusion_from_grades(const std::vector<int>& reference, const std::vector<int>& predicted, int k);

struct DetectionScore {
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

DetectionScore make_score(std::size_t tp, std::size_t fp, std::size_t fn);

/// A prediction may match a truth when its centroid falls on a truth pixel or their IoU reaches
/// min_iou. Pairs are taken greedily by descending pixel overlap, one-to-one.
DetectionScore match_regions(const std::vector<Region>& predicted, const std::vector<Region>& truth,
                             double min_iou = 0.2);

/// Pixel precision/recall of a predicted mask, counted inside `roi` only.
DetectionScore pixel_scores(const Mask& predicted, const Mask& truth, const Mask& roi);

/// Plain-text confusion table with the reference along rows.
std::string format_confusion(const ConfusionMatrix& m);

} // namespace fundus::evaluation
