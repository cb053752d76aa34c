#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hodl/linalg.hpp"

namespace hodl {

/// Named contiguous slice of the flat learning-variable vector.
struct ParamSegment {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

/// Fixed flat layout of all learnable scalars. Built once when a problem's
/// operators are constructed and shared by every ParamVector afterwards, so
/// reported gradients always line up with parameter values.
class ParamLayout {
 public:
  ParamLayout() = default;

  Eigen::Index size() const { return total_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }
  bool has(const std::string& name) const;
  const ParamSegment& segment(const std::string& name) const;

 private:
  friend class LayoutBuilder;
  std::vector<ParamSegment> segments_;
  Eigen::Index total_ = 0;
};

class LayoutBuilder {
 public:
  /// Appends a segment and returns it. Names must be unique.
  ParamSegment add(const std::string& name, Eigen::Index length);
  std::shared_ptr<const ParamLayout> build();

 private:
  ParamLayout layout_;
  bool built_ = false;
};

/// Flat learning-variable vector plus its layout.
struct ParamVector {
  std::shared_ptr<const ParamLayout> layout;
  Vector flat;

  ParamVector() : layout(std::make_shared<ParamLayout>()), flat(0) {}
  ParamVector(std::shared_ptr<const ParamLayout> l, Vector values);

  Eigen::Index size() const { return flat.size(); }

  Eigen::VectorBlock<const Vector> seg(const ParamSegment& s) const {
    return flat.segment(s.offset, s.length);
  }
  Eigen::VectorBlock<Vector> seg(const ParamSegment& s) { return flat.segment(s.offset, s.length); }

  double scalar(const ParamSegment& s) const;

  /// Same layout, new values.
  ParamVector with(Vector values) const { return ParamVector(layout, std::move(values)); }
};

}  // namespace hodl
