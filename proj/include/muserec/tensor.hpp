#ifndef MUSEREC_TENSOR_HPP
#define MUSEREC_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace muserec {

/// Error type for every failure the library reports. The message always
/// starts with the stage or operation that failed.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major tensor of 64-bit floats. Rank 1 and rank 2 are the only
/// shapes the models need; higher ranks are representable but unused.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw Error("tensor: shape/data size mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor vector(std::size_t n) { return zeros({n}); }
  static Tensor matrix(std::size_t r, std::size_t c) { return zeros({r, c}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  double* row_ptr(std::size_t i) { return data.data() + i * shape[1]; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * shape[1]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

bool all_finite(const Tensor& t);

/// Throws if any entry of `t` is NaN or infinite; `where` names the op.
void require_finite(const Tensor& t, const char* where);

}  // namespace muserec

#endif
