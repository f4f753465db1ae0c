#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kdar/tensor.hpp"

namespace kdar {

struct ParamId {
  std::size_t index = 0;
};

template <typename Real>
struct Parameter {
  std::string name;
  Matrix<Real> value;
  Matrix<Real> grad;
};

// Named trainable tensors with their accumulated gradients. Shapes are fixed
// at registration.
template <typename Real>
class ParameterStore {
 public:
  ParamId add(std::string name, Index rows, Index cols);

  Parameter<Real>& operator[](ParamId id) { return *params_.at(id.index); }
  const Parameter<Real>& operator[](ParamId id) const { return *params_.at(id.index); }

  // Throws std::out_of_range for an unknown name.
  ParamId find(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  void zero_grad();

  // Xavier-uniform: U(-b, b), b = sqrt(6 / (rows + cols)).
  void xavier_uniform(std::mt19937_64& rng);

  template <typename Other>
  ParameterStore<Other> cast() const;

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
};

template <typename Real>
template <typename Other>
ParameterStore<Other> ParameterStore<Real>::cast() const {
  ParameterStore<Other> out;
  for (const auto& p : params_) {
    auto id = out.add(p->name, p->value.rows(), p->value.cols());
    out[id].value = p->value.template cast<Other>();
  }
  return out;
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are shaped like the parameters they
// follow; gradients are zeroed after every step.
template <typename Real>
class Adam {
 public:
  explicit Adam(const ParameterStore<Real>& store, AdamOptions options = {});

  void step(ParameterStore<Real>& store, double lr);

  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Matrix<Real>>& first_moments() const { return m_; }
  const std::vector<Matrix<Real>>& second_moments() const { return v_; }

  // Used by checkpoint restore.
  void restore(std::int64_t steps, std::vector<Matrix<Real>> m, std::vector<Matrix<Real>> v);

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::vector<Matrix<Real>> m_;
  std::vector<Matrix<Real>> v_;
};

// Checkpoint layout, all integers unsigned 32-bit little-endian:
//   "KDAR" | version | per tensor: name_len, name, rank, dims..., f32 data
// Adam moments, when present, follow as tensors named "adam.m/<param>" and
// "adam.v/<param>" plus a one-element "adam.step".
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Real>& store,
                     const Adam<Real>* adam = nullptr);

// Fills an existing store; names and shapes must match exactly.
template <typename Real>
void load_checkpoint(const std::filesystem::path& path, ParameterStore<Real>& store,
                     Adam<Real>* adam = nullptr);

}  // namespace kdar
