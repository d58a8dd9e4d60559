#pragma once

// Umbrella header for the goal-consistent anticipation library.

#include "gca/adam.hpp"
#include "gca/cooccurrence.hpp"
#include "gca/dataset.hpp"
#include "gca/errors.hpp"
#include "gca/evaluation.hpp"
#include "gca/gradcheck.hpp"
#include "gca/io.hpp"
#include "gca/label_space.hpp"
#include "gca/losses.hpp"
#include "gca/mat.hpp"
#include "gca/model.hpp"
#include "gca/synthetic.hpp"
#include "gca/training.hpp"
