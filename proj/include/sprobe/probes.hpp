#pragma once

// L2-regularized logistic probes on pooled hidden states.
//
// Loss: mean_i softplus(-y_i (w . x_i + b)) + (l2 / 2) ||w||^2 over
// z-scored features, y in {-1, +1}; the bias is not penalized. Minimized by
// full-batch gradient descent (Barzilai-Borwein trial step, Armijo
// backtracking) until max |gradient| <= tol.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprobe/activation_store.hpp"
#include "sprobe/error.hpp"

namespace sprobe {

using Matrix = std::vector<std::vector<double>>;

struct ProbeOptions {
  double split_fraction = 0.65;
  double l2 = 1e-2;
  double tol = 1e-8;
  std::size_t max_iter = 10000;
};

struct ProbeModel {
  std::string concept_id;
  std::size_t layer = 0;
  Pooling pooling = Pooling::mean_nonpad;
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  double split_fraction = 0.0;
  std::size_t iterations = 0;

  std::size_t dim() const { return w.size(); }
};

struct ProbeMetrics {
  double accuracy = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  bool f1_undefined = false;  // no predicted positives; f1 set to 0
};

struct Split {
  std::vector<std::size_t> train_pos, test_pos, train_neg, test_neg;
};

// Per class: shuffle indices with the seed, train on
// clamp(round(fraction * n), 1, n - 1) of them. Throws ProbeError when a
// class has fewer than 2 examples.
Split stratified_split(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed, double fraction);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 where the train feature is constant
};
Standardizer fit_standardizer(const Matrix& rows);

struct LogisticFit {
  std::vector<double> w;
  double b = 0.0;
  std::size_t iterations = 0;
  double loss = 0.0;
  double grad_max = 0.0;
};

// Minimizes the loss above on already-standardized rows; labels are 0/1.
// Throws ProbeError when the iteration cap is reached.
LogisticFit fit_logistic(const Matrix& x, const std::vector<int>& labels, double l2, double tol,
                         std::size_t max_iter);

// The objective fit_logistic minimizes.
double logistic_loss(const Matrix& x, const std::vector<int>& labels, const std::vector<double>& w,
                     double b, double l2);

double probe_score(const ProbeModel& model, std::span<const double> h);

struct ScoredExample {
  double score = 0.0;
  int label = 0;  // 1 = concept present
};

// Accuracy at threshold 0.5 (score >= 0.5 predicts present), rank AUC with
// average ranks for ties, F1 on the present class. Throws ProbeError on
// single-class input.
ProbeMetrics evaluate(const std::vector<ScoredExample>& scores);

struct ProbeFit {
  ProbeModel model;
  ProbeMetrics metrics;
  std::vector<ScoredExample> held_out;  // test predictions: positives first, then negatives
};

ProbeFit train_probe(const Matrix& pos, const Matrix& neg, std::uint64_t seed,
                     const ProbeOptions& opts = {});

nlohmann::json probe_to_json(const ProbeModel& m);
ProbeModel probe_from_json(const nlohmann::json& j);

}  // namespace sprobe
