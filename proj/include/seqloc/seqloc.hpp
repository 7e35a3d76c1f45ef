#pragma once

// Everything except the ground-truth reader (seqloc/gt.hpp), which evaluation includes explicitly.

#include "seqloc/assoc.hpp"
#include "seqloc/config.hpp"
#include "seqloc/csv.hpp"
#include "seqloc/emtrain.hpp"
#include "seqloc/error.hpp"
#include "seqloc/feature_map.hpp"
#include "seqloc/features.hpp"
#include "seqloc/geometry.hpp"
#include "seqloc/image.hpp"
#include "seqloc/parallel.hpp"
#include "seqloc/placerec.hpp"
#include "seqloc/pose.hpp"
#include "seqloc/random.hpp"
#include "seqloc/simworld.hpp"
