#pragma once

#include "cohort.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "evaluate.hpp"
#include "explain.hpp"
#include "feature_matrix.hpp"
#include "io.hpp"
#include "model.hpp"
#include "nomogram.hpp"
#include "pipeline.hpp"
#include "preprocess.hpp"
#include "resample.hpp"
#include "select.hpp"
