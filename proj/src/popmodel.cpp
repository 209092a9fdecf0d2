#include "pwer/popmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pwer/error.hpp"

namespace pwer {

namespace {

constexpr double kSumTol = 1e-9;

Subset full_set(int m) {
  return m >= 32 ? ~Subset{0} : ((Subset{1} << m) - 1);
}

}  // namespace

Subset subset_of(std::span<const int> indices) {
  Subset s = 0;
  for (const int i : indices) {
    if (i < 1 || i > kMaxHypotheses) {
      throw ValidationError("hypothesis index " + std::to_string(i) + " out of range 1.." +
                            std::to_string(kMaxHypotheses));
    }
    s |= Subset{1} << (i - 1);
  }
  return s;
}

Subset subset_of(std::initializer_list<int> indices) {
  return subset_of(std::span<const int>(indices.begin(), indices.size()));
}

std::vector<int> indices_of(Subset s) {
  std::vector<int> out;
  for (int i = 0; s != 0; ++i, s >>= 1) {
    if (s & 1u) out.push_back(i + 1);
  }
  return out;
}

std::vector<int> zero_based(Subset s) {
  std::vector<int> out;
  for (int i = 0; s != 0; ++i, s >>= 1) {
    if (s & 1u) out.push_back(i);
  }
  return out;
}

std::string format_subset(Subset s) {
  std::ostringstream os;
  os << '{';
  bool first = true;
  for (const int i : indices_of(s)) {
    if (!first) os << ',';
    os << i;
    first = false;
  }
  os << '}';
  return os.str();
}

PopulationStructure PopulationStructure::make(std::vector<Stratum> strata, std::optional<int> m) {
  if (strata.empty()) throw ValidationError("population structure needs at least one stratum");
  Subset used = 0;
  double total = 0.0;
  for (const auto& s : strata) {
    if (s.subset == 0) throw ValidationError("strata subsets must be non-empty");
    if (!std::isfinite(s.prevalence) || s.prevalence < 0.0) {
      throw ValidationError("prevalences must be finite and non-negative");
    }
    total += s.prevalence;
    used |= s.subset;
  }
  if (std::abs(total - 1.0) > kSumTol) {
    std::ostringstream os;
    os << "prevalences must sum to 1 (got " << total << ")";
    throw ValidationError(os.str());
  }
  const int highest = std::bit_width(used);
  const int count = m.value_or(highest);
  if (count < 1 || count > kMaxHypotheses) {
    throw ValidationError("number of hypotheses must lie in 1.." + std::to_string(kMaxHypotheses));
  }
  if (highest > count) throw ValidationError("stratum refers to a hypothesis beyond m");

  std::sort(strata.begin(), strata.end(),
            [](const Stratum& a, const Stratum& b) { return a.subset < b.subset; });
  for (std::size_t k = 1; k < strata.size(); ++k) {
    if (strata[k].subset == strata[k - 1].subset) {
      throw ValidationError("duplicate stratum " + format_subset(strata[k].subset));
    }
  }
  std::erase_if(strata, [](const Stratum& s) { return s.prevalence == 0.0; });

  Subset covered = 0;
  for (auto& s : strata) {
    s.prevalence /= total;
    covered |= s.subset;
  }
  if (covered != full_set(count)) {
    throw ValidationError("every hypothesis must belong to a stratum with positive prevalence");
  }

  PopulationStructure out;
  out.m_ = count;
  out.strata_ = std::move(strata);
  return out;
}

PopulationStructure PopulationStructure::nested(std::span<const double> p) {
  if (p.empty()) throw ValidationError("nested structure needs at least one population");
  if (std::abs(p[0] - 1.0) > 1e-12) {
    throw ValidationError("the outermost nested population must have prevalence 1");
  }
  std::vector<Stratum> strata;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double next = i + 1 < p.size() ? p[i + 1] : 0.0;
    if (!(p[i] > next) || !std::isfinite(p[i])) {
      throw ValidationError("nested prevalences must be strictly decreasing and positive");
    }
    strata.push_back({full_set(static_cast<int>(i + 1)), p[i] - next});
  }
  return make(std::move(strata), static_cast<int>(p.size()));
}

Subset PopulationStructure::hypotheses_affecting(Subset j) const {
  return j & full_set(m_);
}

std::vector<Subset> PopulationStructure::strata_containing(int i) const {
  if (i < 1 || i > m_) throw ValidationError("hypothesis index out of range");
  const Subset bit = Subset{1} << (i - 1);
  std::vector<Subset> out;
  for (const auto& s : strata_) {
    if (s.subset & bit) out.push_back(s.subset);
  }
  return out;
}

double PopulationStructure::population_prevalence(int i) const {
  if (i < 1 || i > m_) throw ValidationError("hypothesis index out of range");
  const Subset bit = Subset{1} << (i - 1);
  double p = 0.0;
  for (const auto& s : strata_) {
    if (s.subset & bit) p += s.prevalence;
  }
  return p;
}

nlohmann::json to_json(const PopulationStructure& s) {
  nlohmann::json strata = nlohmann::json::array();
  for (const auto& st : s.strata()) {
    strata.push_back({{"subset", indices_of(st.subset)}, {"pi", st.prevalence}});
  }
  return {{"m", s.m()}, {"strata", strata}};
}

PopulationStructure structure_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("strata") || !j["strata"].is_array()) {
    throw ValidationError("structure JSON needs a \"strata\" array");
  }
  std::vector<Stratum> strata;
  for (const auto& item : j["strata"]) {
    if (!item.is_object() || !item.contains("subset") || !item.contains("pi") ||
        !item["subset"].is_array() || !item["pi"].is_number()) {
      throw ValidationError("each stratum needs \"subset\" (array) and \"pi\" (number)");
    }
    std::vector<int> idx;
    for (const auto& v : item["subset"]) {
      if (!v.is_number_integer()) throw ValidationError("subset entries must be integers");
      idx.push_back(v.get<int>());
    }
    strata.push_back({subset_of(idx), item["pi"].get<double>()});
  }
  std::optional<int> m;
  if (j.contains("m")) {
    if (!j["m"].is_number_integer()) throw ValidationError("\"m\" must be an integer");
    m = j["m"].get<int>();
  }
  return PopulationStructure::make(std::move(strata), m);
}

PrevalenceEstimate prevalence_mle(std::span<const StratumCount> counts,
                                  std::optional<double> pi_min) {
  if (counts.empty()) throw ValidationError("prevalence_mle needs at least one stratum");
  std::uint64_t total = 0;
  for (std::size_t a = 0; a < counts.size(); ++a) {
    if (counts[a].subset == 0) throw ValidationError("strata subsets must be non-empty");
    for (std::size_t b = 0; b < a; ++b) {
      if (counts[a].subset == counts[b].subset) throw ValidationError("duplicate stratum counts");
    }
    total += counts[a].count;
  }
  if (total == 0) throw ValidationError("prevalence_mle: all counts are zero");

  PrevalenceEstimate est;
  est.total_n = total;
  for (const auto& c : counts) {
    est.estimates.push_back(
        {c.subset, static_cast<double>(c.count) / static_cast<double>(total)});
  }
  if (!pi_min) return est;

  const double floor = *pi_min;
  const double k = static_cast<double>(counts.size());
  if (!(floor > 0.0) || floor * k >= 1.0) {
    throw ValidationError("pi_min must be positive and leave room for the remaining strata");
  }
  std::vector<bool> floored(counts.size(), false);
  for (bool changed = true; changed;) {
    changed = false;
    double free_mass = 0.0;
    double floored_count = 0.0;
    for (std::size_t a = 0; a < counts.size(); ++a) {
      if (floored[a]) {
        floored_count += 1.0;
      } else {
        free_mass += static_cast<double>(counts[a].count);
      }
    }
    const double scale = (1.0 - floored_count * floor) / free_mass;
    for (std::size_t a = 0; a < counts.size(); ++a) {
      if (floored[a]) {
        est.estimates[a].prevalence = floor;
        continue;
      }
      const double v = static_cast<double>(counts[a].count) * scale;
      if (v < floor) {
        floored[a] = true;
        changed = true;
      }
      est.estimates[a].prevalence = v;
    }
  }
  est.floor_applied = std::find(floored.begin(), floored.end(), true) != floored.end();
  return est;
}

}  // namespace pwer
