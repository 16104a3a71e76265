#pragma once

// libtorch's logging header defines a glog-style CHECK that would shadow doctest's.
#include <torch/torch.h>

#undef CHECK
#include "doctest.h"
