#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "sentord/nn/tensor.hpp"
#include "sentord/random.hpp"

namespace sentord::nn {

using ParamId = std::size_t;

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
};

/// small_uniform draws from U(-a, a) with standard deviation kSmallInitStd.
enum class Init { xavier_uniform, small_uniform, zeros, ones };

inline constexpr double kSmallInitStd = 0.02;

/// Named, ordered collection of every trainable tensor of a model. Ids are
/// insertion indices and stay stable for the life of the set.
template <typename Scalar>
class ParameterSet {
 public:
  ParamId add(const std::string& name, Index rows, Index cols, Init init, Rng& rng);
  ParamId add(const std::string& name, Matrix<Scalar> value);

  std::size_t size() const { return params_.size(); }
  /// Total number of scalars.
  std::size_t count() const;

  Parameter<Scalar>& operator[](ParamId id) { return params_[id]; }
  const Parameter<Scalar>& operator[](ParamId id) const { return params_[id]; }
  Matrix<Scalar>& value(ParamId id) { return params_[id].value; }
  const Matrix<Scalar>& value(ParamId id) const { return params_[id].value; }

  /// Throws std::out_of_range for an unknown name.
  ParamId id_of(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::unordered_map<std::string, ParamId> by_name_;
};

/// One gradient buffer per parameter, shaped like the parameter.
template <typename Scalar>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet<Scalar>& params);

  std::size_t size() const { return grads_.size(); }
  Matrix<Scalar>& operator[](ParamId id) { return grads_[id]; }
  const Matrix<Scalar>& operator[](ParamId id) const { return grads_[id]; }

  void set_zero();
  Gradients& operator+=(const Gradients& other);
  void scale(Scalar factor);
  /// sqrt of the sum of squares over every buffer.
  double global_norm() const;

 private:
  std::vector<Matrix<Scalar>> grads_;
};

}  // namespace sentord::nn
