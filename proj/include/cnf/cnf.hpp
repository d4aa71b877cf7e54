#pragma once

#include "cnf/camera.hpp"
#include "cnf/checkpoint.hpp"
#include "cnf/continual.hpp"
#include "cnf/encoding.hpp"
#include "cnf/errors.hpp"
#include "cnf/eval.hpp"
#include "cnf/experiment.hpp"
#include "cnf/field.hpp"
#include "cnf/grid.hpp"
#include "cnf/image_io.hpp"
#include "cnf/manifest.hpp"
#include "cnf/parallel.hpp"
#include "cnf/render.hpp"
#include "cnf/rng.hpp"
#include "cnf/synthetic.hpp"
#include "cnf/task_stream.hpp"
#include "cnf/training.hpp"
