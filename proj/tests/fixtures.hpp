#pragma once

#include <vector>

#include "instdet/render.hpp"

namespace fixture {

inline std::vector<instdet::ObjectModel> primitives() {
  using V = Eigen::Vector3f;
  std::vector<instdet::ObjectModel> m;
  m.push_back(instdet::make_cuboid("box", {0.09, 0.06, 0.04},
                                   {V(0.9f, 0.2f, 0.2f), V(0.7f, 0.1f, 0.1f), V(0.2f, 0.8f, 0.2f),
                                    V(0.1f, 0.6f, 0.1f), V(0.2f, 0.2f, 0.9f), V(0.1f, 0.1f, 0.7f)}));
  m.push_back(instdet::make_cylinder("can", 0.03, 0.1, {0.8f, 0.8f, 0.2f}, {0.3f, 0.3f, 0.3f}));
  m.push_back(instdet::make_sphere("ball", 0.04, {0.2f, 0.6f, 0.9f}, {0.9f, 0.4f, 0.1f}));
  return m;
}

}  // namespace fixture
