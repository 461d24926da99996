#include "iblab/detector.hpp"

#include "iblab/binary_io.hpp"
#include "iblab/json_util.hpp"
#include "iblab/text_util.hpp"

#include <algorithm>
#include <array>
#include <fstream>

namespace iblab {
namespace {

constexpr std::array<char, 6> kLatentMagic = {'I', 'B', 'L', 'A', 'T', '\0'};
constexpr std::uint32_t kLatentVersion = 1;

LatentStats make_stats(std::span<const Vec> latents, double shrinkage, double cov_scale,
                       bool filtered) {
  auto mc = empirical_mean_cov<double>(latents, shrinkage);
  mc.cov *= cov_scale;
  Chol chol = cholesky(mc.cov);
  return {std::move(mc.mean), std::move(mc.cov), std::move(chol),
          static_cast<int>(latents.size()), shrinkage, filtered};
}

}  // namespace

LatentStats fit_sft_stats(const std::vector<Vec>& latents, const FitOptions& opts) {
  if (latents.empty()) throw std::invalid_argument("fit_sft_stats: no latents");
  const Index k = latents.front().size();
  if (latents.size() < static_cast<std::size_t>(k) + 1) {
    throw std::invalid_argument("fit_sft_stats: need at least k+1 latents, got " +
                                std::to_string(latents.size()));
  }
  if (!(opts.filter_quantile > 0 && opts.filter_quantile <= 1)) {
    throw std::invalid_argument("fit_sft_stats: filter_quantile must be in (0,1]");
  }
  LatentStats first = make_stats(latents, opts.shrinkage, 1.0, false);
  if (opts.filter_quantile >= 1) return first;

  const double cutoff = chi2_quantile(opts.filter_quantile, static_cast<int>(k));
  std::vector<Vec> kept;
  kept.reserve(latents.size());
  for (const auto& z : latents) {
    if (mahalanobis_squared(z, first.mean, first.chol) <= cutoff) kept.push_back(z);
  }
  if (kept.size() < static_cast<std::size_t>(k) + 1) {
    throw std::invalid_argument("fit_sft_stats: filter left fewer than k+1 latents");
  }
  const double scale = opts.consistency_correction
                           ? opts.filter_quantile / chi2_cdf(cutoff, static_cast<int>(k) + 2)
                           : 1.0;
  return make_stats(kept, opts.shrinkage, scale, true);
}

double p_value(double d2, int k) {
  if (!(d2 >= 0)) throw std::invalid_argument("p_value: d2 must be >= 0");
  return chi2_sf(d2, k);
}

void DetectionReport::check() const {
  if (d2.size() != p_values.size() || d2.size() != flags.size()) {
    throw std::logic_error("DetectionReport: length mismatch");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] != (p_values[i] < alpha)) throw std::logic_error("DetectionReport: flag mismatch");
    count += flags[i];
  }
  if (!flags.empty() && mop != double(count) / double(flags.size())) {
    throw std::logic_error("DetectionReport: mop mismatch");
  }
}

DetectionReport detect(const std::vector<Vec>& latents, const LatentStats& stats,
                       double alpha) {
  if (latents.empty()) throw std::invalid_argument("detect: no latents");
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("detect: alpha must be in (0,1)");
  DetectionReport r;
  r.alpha = alpha;
  r.d2.reserve(latents.size());
  r.p_values.reserve(latents.size());
  r.flags.reserve(latents.size());
  std::size_t count = 0;
  for (const auto& z : latents) {
    const double d2 = mahalanobis_squared(z, stats.mean, stats.chol);
    const double p = p_value(d2, stats.dim());
    r.d2.push_back(d2);
    r.p_values.push_back(p);
    r.flags.push_back(p < alpha);
    count += p < alpha;
  }
  r.mop = double(count) / double(latents.size());
  r.check();
  return r;
}

double mop(const std::vector<Vec>& latents, const LatentStats& stats, double alpha) {
  return detect(latents, stats, alpha).mop;
}

nlohmann::json to_json(const DetectionReport& r) {
  std::vector<int> flags(r.flags.begin(), r.flags.end());
  return {{"summary",
           {{"n", r.d2.size()},
            {"alpha", r.alpha},
            {"mop", r.mop},
            {"flagged", std::count(r.flags.begin(), r.flags.end(), true)}}},
          {"d2", r.d2},
          {"p_values", r.p_values},
          {"flags", flags}};
}

nlohmann::json to_json(const LatentStats& s) {
  return {{"mean", vec_to_json(s.mean)},
          {"cov", mat_to_json(s.cov)},
          {"n_samples", s.n_samples},
          {"shrinkage", s.shrinkage},
          {"filtered", s.filtered}};
}

void write_latents_binary(std::ostream& out, const std::vector<Vec>& rows) {
  const std::uint32_t dim = rows.empty() ? 0 : static_cast<std::uint32_t>(rows.front().size());
  out.write(kLatentMagic.data(), kLatentMagic.size());
  binio::write_u32(out, kLatentVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(rows.size()));
  binio::write_u32(out, dim);
  for (const auto& r : rows) {
    require_same_dim(r.size(), dim, "write_latents_binary");
    for (Index j = 0; j < r.size(); ++j) binio::write_f64(out, r(j));
  }
  if (!out) throw std::runtime_error("write_latents_binary: stream error");
}

std::vector<Vec> read_latents_binary(std::istream& in) {
  std::array<char, 6> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kLatentMagic) throw std::runtime_error("latent dump: bad magic tag");
  if (binio::read_u32(in) != kLatentVersion) {
    throw std::runtime_error("latent dump: unsupported version");
  }
  const std::uint32_t rows = binio::read_u32(in);
  const std::uint32_t dim = binio::read_u32(in);
  if (dim > (1u << 16) || std::uint64_t(rows) * dim > (1ull << 30)) {
    throw std::runtime_error("latent dump: implausible header");
  }
  std::vector<Vec> out(rows, Vec(dim));
  for (auto& r : out) {
    for (std::uint32_t j = 0; j < dim; ++j) r(j) = binio::read_f64(in);
  }
  return out;
}

void write_latents_csv(std::ostream& out, const std::vector<Vec>& rows) {
  for (const auto& r : rows) {
    for (Index j = 0; j < r.size(); ++j) {
      if (j) out << ',';
      out << format_double(r(j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_latents_csv: stream error");
}

std::vector<Vec> read_latents_csv(std::istream& in) {
  std::vector<Vec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = std::min(line.find(',', pos), line.size());
      const auto v = parse_number<double>(std::string_view(line).substr(pos, comma - pos));
      if (!v) throw std::runtime_error("latent csv line " + std::to_string(lineno) + ": bad number");
      vals.push_back(*v);
      pos = comma + 1;
    }
    Vec r = Eigen::Map<Vec>(vals.data(), Index(vals.size()));
    if (!out.empty()) require_same_dim(r.size(), out.front().size(), "latent csv");
    out.push_back(std::move(r));
  }
  return out;
}

void save_latents(const std::filesystem::path& path, const std::vector<Vec>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (path.extension() == ".csv") {
    write_latents_csv(out, rows);
  } else {
    write_latents_binary(out, rows);
  }
}

std::vector<Vec> load_latents(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return path.extension() == ".csv" ? read_latents_csv(in) : read_latents_binary(in);
}

}  // namespace iblab
