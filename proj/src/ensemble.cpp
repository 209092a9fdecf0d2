#include "pwer/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pwer/error.hpp"
#include "pwer/parallel.hpp"

namespace pwer {

ExceedanceEnsemble::ExceedanceEnsemble(const CorrelationMatrix& corr, double df,
                                       std::vector<std::vector<int>> groups,
                                       std::vector<double> divisors, std::size_t n_draws,
                                       std::uint64_t seed, unsigned threads)
    : n_draws_(n_draws), n_groups_(groups.size()) {
  if (n_draws == 0) throw ValidationError("ensemble needs at least one draw");
  if (groups.empty()) throw ValidationError("ensemble needs at least one group");
  const int dim = corr.dim();
  if (divisors.empty()) divisors.assign(static_cast<std::size_t>(dim), 1.0);
  if (static_cast<int>(divisors.size()) != dim) {
    throw ValidationError("ensemble divisors do not match the dimension");
  }
  for (const double d : divisors) {
    if (!(d > 0.0) || !std::isfinite(d)) throw ValidationError("divisors must be positive");
  }
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("ensemble groups must be non-empty");
    for (const int i : g) {
      if (i < 0 || i >= dim) throw ValidationError("ensemble group index out of range");
    }
  }

  maxima_.resize(n_draws_ * n_groups_);
  const JointSampler sampler(corr, df);
  const std::size_t block_size = JointSampler::kBlockSize;
  const std::size_t blocks = (n_draws + block_size - 1) / block_size;
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t first = b * block_size;
    const std::size_t count = std::min(block_size, n_draws - first);
    Eigen::MatrixXd x;
    sampler.fill_block(seed, b, count, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) /= divisors[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < count; ++j) {
      const double* col = x.col(static_cast<Eigen::Index>(j)).data();
      double* out = &maxima_[(first + j) * n_groups_];
      for (std::size_t g = 0; g < n_groups_; ++g) {
        double m = -HUGE_VAL;
        for (const int i : groups[g]) m = std::max(m, col[i]);
        out[g] = m;
      }
    }
  });
}

double ExceedanceEnsemble::rate(double c, std::span<const double> weights) const {
  if (weights.size() != n_groups_) throw ValidationError("weight count does not match groups");
  double total = 0.0;
  for (std::size_t d = 0; d < n_draws_; ++d) {
    const double* row = &maxima_[d * n_groups_];
    for (std::size_t g = 0; g < n_groups_; ++g) {
      if (row[g] > c) total += weights[g];
    }
  }
  return total / static_cast<double>(n_draws_);
}

double ExceedanceEnsemble::standard_error(double c, std::span<const double> weights) const {
  if (weights.size() != n_groups_) throw ValidationError("weight count does not match groups");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t d = 0; d < n_draws_; ++d) {
    const double* row = &maxima_[d * n_groups_];
    double f = 0.0;
    for (std::size_t g = 0; g < n_groups_; ++g) {
      if (row[g] > c) f += weights[g];
    }
    sum += f;
    sum_sq += f * f;
  }
  const double n = static_cast<double>(n_draws_);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return std::sqrt(var / n);
}

ExceedanceCurve::ExceedanceCurve(const ExceedanceEnsemble& ensemble,
                                 std::span<const double> weights)
    : n_draws_(static_cast<double>(ensemble.draws())) {
  if (weights.size() != ensemble.groups()) {
    throw ValidationError("weight count does not match groups");
  }
  std::vector<std::pair<double, double>> events;
  events.reserve(ensemble.draws() * ensemble.groups());
  for (std::size_t d = 0; d < ensemble.draws(); ++d) {
    for (std::size_t g = 0; g < ensemble.groups(); ++g) {
      if (weights[g] != 0.0) events.emplace_back(ensemble.maximum(d, g), weights[g]);
    }
  }
  std::sort(events.begin(), events.end());
  values_.resize(events.size());
  tail_weight_.resize(events.size() + 1);
  tail_weight_.back() = 0.0;
  for (std::size_t k = events.size(); k-- > 0;) {
    values_[k] = events[k].first;
    tail_weight_[k] = tail_weight_[k + 1] + events[k].second;
  }
}

double ExceedanceCurve::operator()(double c) const {
  const auto it = std::upper_bound(values_.begin(), values_.end(), c);
  return tail_weight_[static_cast<std::size_t>(it - values_.begin())] / n_draws_;
}

}  // namespace pwer
