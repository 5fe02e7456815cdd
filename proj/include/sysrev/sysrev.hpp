#pragma once

// Umbrella header.

#include "sysrev/augment.hpp"
#include "sysrev/corpus.hpp"
#include "sysrev/error.hpp"
#include "sysrev/evalkit.hpp"
#include "sysrev/humaneval.hpp"
#include "sysrev/remote.hpp"
#include "sysrev/rerank.hpp"
#include "sysrev/retrieval.hpp"
#include "sysrev/summarise.hpp"
#include "sysrev/text.hpp"
#include "sysrev/version.hpp"
