#pragma once

#include <ostream>

#include "svfreg/grid.hpp"

namespace svfreg {

template <class T>
void PrintTo(const Vec3<T>& v, std::ostream* os) {
  *os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

}  // namespace svfreg
