#pragma once

#include "vea/attention.hpp"
#include "vea/error.hpp"
#include "vea/formats.hpp"
#include "vea/imageops.hpp"
#include "vea/maskgen.hpp"
#include "vea/metrics.hpp"
#include "vea/profiling.hpp"
