#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridsight {

// PCA over encoder embeddings. axes is L x L row-major with the k-th
// principal axis in column k; eigenvalues are sorted descending and each
// axis carries its largest-magnitude component positive.
struct PcaModel {
  std::vector<double> mean;         // L
  std::vector<double> axes;         // L*L row-major, columns are axes
  std::vector<double> eigenvalues;  // L, descending

  std::size_t dim() const { return mean.size(); }
  double axis(std::size_t row, std::size_t k) const { return axes[row * dim() + k]; }
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is destroyed;
// v receives the eigenvectors in columns.
inline void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, std::vector<double>& d,
                         std::size_t n) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  d.resize(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i * n + i];
}

}  // namespace detail

// Eigendecomposition of the sample covariance (divisor N - 1).
inline PcaModel pca_fit(const std::vector<std::vector<float>>& embeddings) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 samples");
  const std::size_t dim = embeddings[0].size();
  if (dim == 0) throw std::invalid_argument("pca_fit: empty embeddings");
  for (const auto& e : embeddings) {
    if (e.size() != dim) throw std::invalid_argument("pca_fit: ragged embedding matrix");
    for (float v : e) {
      if (!std::isfinite(v)) throw std::invalid_argument("pca_fit: non-finite input");
    }
  }

  PcaModel model;
  model.mean.assign(dim, 0.0);
  for (const auto& e : embeddings) {
    for (std::size_t i = 0; i < dim; ++i) model.mean[i] += e[i];
  }
  for (double& m : model.mean) m /= static_cast<double>(n);

  std::vector<double> cov(dim * dim, 0.0);
  std::vector<double> centered(dim);
  for (const auto& e : embeddings) {
    for (std::size_t i = 0; i < dim; ++i) centered[i] = e[i] - model.mean[i];
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = i; j < dim; ++j) cov[i * dim + j] += centered[i] * centered[j];
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i; j < dim; ++j) {
      cov[i * dim + j] /= static_cast<double>(n - 1);
      cov[j * dim + i] = cov[i * dim + j];
    }
  }

  std::vector<double> vecs, vals;
  detail::jacobi_eigen(cov, vecs, vals, dim);

  std::vector<std::size_t> idx(dim);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return vals[a] > vals[b];
  });

  model.axes.assign(dim * dim, 0.0);
  model.eigenvalues.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) {
    const std::size_t src = idx[k];
    model.eigenvalues[k] = vals[src];
    // Sign convention: the largest-magnitude component of each axis positive.
    std::size_t arg = 0;
    double best = 0;
    for (std::size_t r = 0; r < dim; ++r) {
      const double mag = std::abs(vecs[r * dim + src]);
      if (mag > best) {
        best = mag;
        arg = r;
      }
    }
    const double sign = vecs[arg * dim + src] < 0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < dim; ++r) model.axes[r * dim + k] = sign * vecs[r * dim + src];
  }
  return model;
}

// z' = mu + amount * axes[:, k].
inline std::vector<float> perturb_axis(const std::vector<float>& mu, const PcaModel& pca,
                                       std::size_t k, double amount) {
  if (mu.size() != pca.dim()) throw std::invalid_argument("perturb_axis: dimension mismatch");
  if (k >= pca.dim()) throw std::out_of_range("perturb_axis: axis index out of range");
  std::vector<float> out(mu.size());
  for (std::size_t r = 0; r < mu.size(); ++r) {
    out[r] = static_cast<float>(mu[r] + amount * pca.axis(r, k));
  }
  return out;
}

inline nlohmann::json pca_to_json(const PcaModel& model) {
  return nlohmann::json{{"mean", model.mean},
                        {"eigenvalues", model.eigenvalues},
                        {"axes", model.axes}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel model;
  model.mean = j.at("mean").get<std::vector<double>>();
  model.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
  model.axes = j.at("axes").get<std::vector<double>>();
  if (model.axes.size() != model.mean.size() * model.mean.size() ||
      model.eigenvalues.size() != model.mean.size()) {
    throw std::runtime_error("malformed PCA dump");
  }
  return model;
}

inline void write_pca(const PcaModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << pca_to_json(model).dump() << "\n";
}

inline PcaModel read_pca(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed PCA JSON " + path + ": " + e.what());
  }
  return pca_from_json(j);
}

}  // namespace gridsight
