#include "ssbver/tensor.hpp"

#include <functional>
#include <numeric>

namespace ssbver {

Tensor::Tensor(std::string n, std::vector<int> s, double fill) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, [](std::size_t a, int b) { return a * b; });
  values.assign(count, fill);
}

std::size_t element_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& t : params) n += t.size();
  return n;
}

ParamList zeros_like(const ParamList& params) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& t : params) out.emplace_back(t.name, t.shape, 0.0);
  return out;
}

void fill_zero(ParamList& params) {
  for (auto& t : params) std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool same_shapes(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape != b[i].shape || a[i].size() != b[i].size()) return false;
  }
  return true;
}

void append_prefixed(ParamList& dst, const ParamList& src, const std::string& prefix) {
  for (const auto& t : src) {
    Tensor copy = t;
    copy.name = prefix + t.name;
    dst.push_back(std::move(copy));
  }
}

}  // namespace ssbver
