/* Copyright 2026 The obbssl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef OBBSSL_PARAMS_HPP_
#define OBBSSL_PARAMS_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace obbssl {

struct ParamSegment {
  std::string name;
  size_t offset = 0;
  size_t size = 0;

  bool operator==(const ParamSegment&) const = default;
};

/// Flat parameter storage with named per-layer segments.
class ParamVector {
 public:
  ParamVector() = default;

  /// Appends a zero-initialized segment and returns its offset.
  size_t add_segment(std::string name, size_t size) {
    const size_t off = values_.size();
    segments_.push_back({std::move(name), off, size});
    values_.resize(off + size, 0.0);
    return off;
  }

  size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](size_t i) { return values_[i]; }
  double operator[](size_t i) const { return values_[i]; }

  const std::vector<ParamSegment>& segments() const { return segments_; }

  std::span<double> segment(const std::string& name) {
    const auto& s = find(name);
    return {values_.data() + s.offset, s.size};
  }
  std::span<const double> segment(const std::string& name) const {
    const auto& s = find(name);
    return {values_.data() + s.offset, s.size};
  }

  /// Same layout, all zeros.
  ParamVector zeros_like() const {
    ParamVector z = *this;
    std::fill(z.values_.begin(), z.values_.end(), 0.0);
    return z;
  }

  bool same_shape(const ParamVector& o) const {
    return values_.size() == o.values_.size() && segments_ == o.segments_;
  }

  /// this += a * x.
  void axpy(double a, const ParamVector& x) {
    if (!same_shape(x)) throw std::invalid_argument("ParamVector::axpy: shape mismatch");
    for (size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  bool operator==(const ParamVector&) const = default;

 private:
  const ParamSegment& find(const std::string& name) const {
    for (const auto& s : segments_) {
      if (s.name == name) return s;
    }
    throw std::invalid_argument("ParamVector: no segment named " + name);
  }

  std::vector<double> values_;
  std::vector<ParamSegment> segments_;
};

}  // namespace obbssl

#endif  // OBBSSL_PARAMS_HPP_
