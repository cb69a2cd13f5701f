#include "sprobe/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sprobe/rng.hpp"

namespace sprobe {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kApproxArmijoEps = 1e-10;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Parameters packed as [w..., b].
double value_and_grad(const Matrix& x, const std::vector<int>& labels, const std::vector<double>& theta,
                      double l2, std::vector<double>& grad) {
  const std::size_t d = theta.size() - 1;
  const double n = static_cast<double>(x.size());
  grad.assign(theta.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = theta[d];
    for (std::size_t j = 0; j < d; ++j) z += theta[j] * x[i][j];
    const double y = labels[i] ? 1.0 : -1.0;
    loss += softplus(-y * z);
    const double coef = -y * sigmoid(-y * z);
    for (std::size_t j = 0; j < d; ++j) grad[j] += coef * x[i][j];
    grad[d] += coef;
  }
  loss /= n;
  for (auto& g : grad) g /= n;
  double wsq = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    wsq += theta[j] * theta[j];
    grad[j] += l2 * theta[j];
  }
  return loss + 0.5 * l2 * wsq;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

void check_rows(const Matrix& rows, std::size_t dim, const char* what) {
  for (const auto& r : rows) {
    if (r.size() != dim)
      throw ProbeError(fmt::format("{} vector has length {}, expected {}", what, r.size(), dim));
    if (!std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); }))
      throw ProbeError(fmt::format("{} vector contains non-finite features", what));
  }
}

std::vector<double> standardize(const Standardizer& s, std::span<const double> h) {
  std::vector<double> out(h.size());
  for (std::size_t j = 0; j < h.size(); ++j) out[j] = (h[j] - s.mean[j]) / s.scale[j];
  return out;
}

}  // namespace

Split stratified_split(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed, double fraction) {
  if (n_pos < 2 || n_neg < 2)
    throw ProbeError(fmt::format("each class needs >= 2 examples (pos {}, neg {})", n_pos, n_neg));
  if (!(fraction > 0.0 && fraction < 1.0)) throw ProbeError("split fraction must lie in (0, 1)");
  Rng rng(seed);
  Split s;
  auto take = [&](std::size_t n, std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx.begin(), idx.end());
    const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
    train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    test.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
  };
  take(n_pos, s.train_pos, s.test_pos);
  take(n_neg, s.train_neg, s.test_neg);
  return s;
}

Standardizer fit_standardizer(const Matrix& rows) {
  if (rows.empty()) throw ProbeError("cannot standardize an empty sample");
  const std::size_t d = rows.front().size();
  const double n = static_cast<double>(rows.size());
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  for (auto& m : s.mean) m /= n;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) s.scale[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(s.scale[j] / n);
    s.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 1.0;
  }
  return s;
}

double logistic_loss(const Matrix& x, const std::vector<int>& labels, const std::vector<double>& w,
                     double b, double l2) {
  std::vector<double> theta = w;
  theta.push_back(b);
  std::vector<double> g;
  return value_and_grad(x, labels, theta, l2, g);
}

LogisticFit fit_logistic(const Matrix& x, const std::vector<int>& labels, double l2, double tol,
                         std::size_t max_iter) {
  if (x.empty() || x.size() != labels.size()) throw ProbeError("fit_logistic: empty or mismatched data");
  const std::size_t d = x.front().size();
  std::vector<double> theta(d + 1, 0.0), grad, trial, trial_grad(d + 1);
  double f = value_and_grad(x, labels, theta, l2, grad);
  double step = 1.0;

  for (std::size_t iter = 0;; ++iter) {
    const double gmax = max_abs(grad);
    if (gmax <= tol) return {{theta.begin(), theta.end() - 1}, theta.back(), iter, f, gmax};
    if (iter == max_iter)
      throw ProbeError(fmt::format("probe did not converge in {} iterations (max |g| = {:.3g})", max_iter, gmax));

    const double gd = -dot(grad, grad);
    double alpha = step, f_new = 0.0;
    for (;;) {
      trial = theta;
      for (std::size_t j = 0; j <= d; ++j) trial[j] -= alpha * grad[j];
      f_new = value_and_grad(x, labels, trial, l2, trial_grad);
      if (f_new <= f + kArmijo * alpha * gd) break;
      // Approximate Armijo test for when f differences reach rounding level.
      const double slope = -dot(trial_grad, grad);
      if (f_new <= f + kApproxArmijoEps * std::abs(f) && slope <= (2 * kArmijo - 1) * gd) break;
      alpha *= 0.5;
      if (alpha < 1e-30) throw ProbeError("probe line search failed to find a descent step");
    }

    double ss = 0.0, sy = 0.0;
    for (std::size_t j = 0; j <= d; ++j) {
      const double s = trial[j] - theta[j];
      ss += s * s;
      sy += s * (trial_grad[j] - grad[j]);
    }
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12) : std::min(2.0 * alpha, 1e12);
    theta.swap(trial);
    grad.swap(trial_grad);
    f = f_new;
  }
}

double probe_score(const ProbeModel& model, std::span<const double> h) {
  if (h.size() != model.dim())
    throw ProbeError(fmt::format("probe expects dimension {}, got {}", model.dim(), h.size()));
  double z = model.b;
  for (std::size_t j = 0; j < h.size(); ++j)
    z += model.w[j] * (h[j] - model.feature_mean[j]) / model.feature_scale[j];
  return sigmoid(z);
}

ProbeMetrics evaluate(const std::vector<ScoredExample>& scores) {
  std::size_t n_pos = 0;
  for (const auto& s : scores) n_pos += s.label ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ProbeError("evaluation needs both classes present");

  ProbeMetrics m;
  m.n_test = scores.size();
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (const auto& s : scores) {
    const bool pred = s.score >= 0.5;
    correct += pred == (s.label != 0) ? 1 : 0;
    if (pred && s.label) ++tp;
    if (pred && !s.label) ++fp;
    if (!pred && s.label) ++fn;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
  if (tp + fp == 0) {
    m.f1 = 0.0;
    m.f1_undefined = true;
  } else {
    m.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]].score == scores[order[i]].score) ++j;
    const double avg = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k)
      if (scores[order[k]].label) rank_sum += avg;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  m.auc = (rank_sum - np * (np + 1) / 2.0) / (np * nn);
  return m;
}

ProbeFit train_probe(const Matrix& pos, const Matrix& neg, std::uint64_t seed, const ProbeOptions& opts) {
  if (pos.empty() || neg.empty()) throw ProbeError("each class needs >= 2 examples");
  const std::size_t dim = pos.front().size();
  check_rows(pos, dim, "positive");
  check_rows(neg, dim, "negative");
  const Split split = stratified_split(pos.size(), neg.size(), seed, opts.split_fraction);

  Matrix train_raw;
  std::vector<int> labels;
  for (auto i : split.train_pos) {
    train_raw.push_back(pos[i]);
    labels.push_back(1);
  }
  for (auto i : split.train_neg) {
    train_raw.push_back(neg[i]);
    labels.push_back(0);
  }
  const Standardizer st = fit_standardizer(train_raw);
  Matrix train;
  train.reserve(train_raw.size());
  for (const auto& r : train_raw) train.push_back(standardize(st, r));
  const LogisticFit lf = fit_logistic(train, labels, opts.l2, opts.tol, opts.max_iter);

  ProbeFit out;
  auto& m = out.model;
  m.w = lf.w;
  m.b = lf.b;
  m.feature_mean = st.mean;
  m.feature_scale = st.scale;
  m.l2 = opts.l2;
  m.seed = seed;
  m.split_fraction = opts.split_fraction;
  m.iterations = lf.iterations;

  for (auto i : split.test_pos) out.held_out.push_back({probe_score(m, pos[i]), 1});
  for (auto i : split.test_neg) out.held_out.push_back({probe_score(m, neg[i]), 0});
  out.metrics = evaluate(out.held_out);
  out.metrics.n_train = train.size();
  return out;
}

nlohmann::json probe_to_json(const ProbeModel& m) {
  nlohmann::ordered_json j;
  j["concept_id"] = m.concept_id;
  j["layer"] = m.layer;
  j["pooling"] = std::string(to_string(m.pooling));
  j["w"] = m.w;
  j["b"] = m.b;
  j["feature_mean"] = m.feature_mean;
  j["feature_scale"] = m.feature_scale;
  j["l2"] = m.l2;
  j["seed"] = m.seed;
  j["split_fraction"] = m.split_fraction;
  j["iterations"] = m.iterations;
  return nlohmann::json::parse(j.dump());
}

ProbeModel probe_from_json(const nlohmann::json& j) {
  try {
    ProbeModel m;
    m.concept_id = j.at("concept_id").get<std::string>();
    m.layer = j.at("layer").get<std::size_t>();
    m.pooling = parse_pooling(j.at("pooling").get<std::string>());
    m.w = j.at("w").get<std::vector<double>>();
    m.b = j.at("b").get<double>();
    m.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    m.feature_scale = j.at("feature_scale").get<std::vector<double>>();
    m.l2 = j.at("l2").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_fraction = j.at("split_fraction").get<double>();
    m.iterations = j.value("iterations", std::size_t{0});
    if (m.feature_mean.size() != m.w.size() || m.feature_scale.size() != m.w.size())
      throw ParseError("probe weight and standardization lengths differ");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed probe record: ") + e.what());
  }
}

}  // namespace sprobe
