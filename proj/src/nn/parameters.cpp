#include "sentord/nn/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace sentord::nn {

template <typename Scalar>
ParamId ParameterSet<Scalar>::add(const std::string& name, Index rows, Index cols, Init init, Rng& rng) {
  Matrix<Scalar> value(rows, cols);
  switch (init) {
    case Init::zeros:
      value.setZero();
      break;
    case Init::ones:
      value.setOnes();
      break;
    case Init::xavier_uniform: {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Index i = 0; i < value.size(); ++i) {
        value.data()[i] = static_cast<Scalar>((2.0 * uniform_unit(rng) - 1.0) * limit);
      }
      break;
    }
    case Init::small_uniform: {
      const double limit = kSmallInitStd * std::sqrt(3.0);
      for (Index i = 0; i < value.size(); ++i) {
        value.data()[i] = static_cast<Scalar>((2.0 * uniform_unit(rng) - 1.0) * limit);
      }
      break;
    }
  }
  return add(name, std::move(value));
}

template <typename Scalar>
ParamId ParameterSet<Scalar>::add(const std::string& name, Matrix<Scalar> value) {
  if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  const ParamId id = params_.size();
  params_.push_back({name, std::move(value)});
  by_name_.emplace(name, id);
  return id;
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += static_cast<std::size_t>(p.value.size());
  return total;
}

template <typename Scalar>
ParamId ParameterSet<Scalar>::id_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

template <typename Scalar>
Gradients<Scalar>::Gradients(const ParameterSet<Scalar>& params) {
  grads_.reserve(params.size());
  for (const auto& p : params) grads_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
}

template <typename Scalar>
void Gradients<Scalar>::set_zero() {
  for (auto& g : grads_) g.setZero();
}

template <typename Scalar>
Gradients<Scalar>& Gradients<Scalar>::operator+=(const Gradients& other) {
  if (other.grads_.size() != grads_.size()) throw std::invalid_argument("Gradients: size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  return *this;
}

template <typename Scalar>
void Gradients<Scalar>::scale(Scalar factor) {
  for (auto& g : grads_) g *= factor;
}

template <typename Scalar>
double Gradients<Scalar>::global_norm() const {
  double sq = 0.0;
  for (const auto& g : grads_) sq += static_cast<double>(g.squaredNorm());
  return std::sqrt(sq);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace sentord::nn
