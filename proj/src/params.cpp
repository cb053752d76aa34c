#include "hodl/params.hpp"

#include <stdexcept>

namespace hodl {

bool ParamLayout::has(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return true;
  return false;
}

const ParamSegment& ParamLayout::segment(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw std::invalid_argument("ParamLayout: unknown segment '" + name + "'");
}

ParamSegment LayoutBuilder::add(const std::string& name, Eigen::Index length) {
  if (built_) throw std::logic_error("LayoutBuilder: already built");
  if (length < 0) throw std::invalid_argument("LayoutBuilder: negative length");
  if (layout_.has(name)) throw std::invalid_argument("LayoutBuilder: duplicate segment '" + name + "'");
  ParamSegment s{name, layout_.total_, length};
  layout_.segments_.push_back(s);
  layout_.total_ += length;
  return s;
}

std::shared_ptr<const ParamLayout> LayoutBuilder::build() {
  built_ = true;
  return std::make_shared<const ParamLayout>(layout_);
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> l, Vector values)
    : layout(std::move(l)), flat(std::move(values)) {
  if (!layout) throw std::invalid_argument("ParamVector: null layout");
  if (flat.size() != layout->size())
    throw std::invalid_argument("ParamVector: value length does not match layout");
}

double ParamVector::scalar(const ParamSegment& s) const {
  if (s.length != 1) throw std::invalid_argument("ParamVector::scalar: segment is not scalar");
  return flat[s.offset];
}

}  // namespace hodl
