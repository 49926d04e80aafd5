#pragma once

#include "bcisim/arm.hpp"
#include "bcisim/config.hpp"
#include "bcisim/decoder.hpp"
#include "bcisim/encoder.hpp"
#include "bcisim/export.hpp"
#include "bcisim/harness.hpp"
#include "bcisim/learner.hpp"
#include "bcisim/oracle.hpp"
#include "bcisim/random.hpp"
#include "bcisim/stats.hpp"
#include "bcisim/types.hpp"
