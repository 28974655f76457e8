#ifndef CHAI_CHAI_HPP
#define CHAI_CHAI_HPP

#include "errors.hpp"
#include "tensor.hpp"
#include "random.hpp"
#include "ops.hpp"
#include "params.hpp"
#include "tape.hpp"
#include "model.hpp"
#include "weights_io.hpp"
#include "labels.hpp"
#include "triplet.hpp"
#include "train.hpp"
#include "retrieval.hpp"
#include "image.hpp"
#include "evidence.hpp"
#include "metrics.hpp"
#include "eval.hpp"
#include "manifest.hpp"
#include "synth.hpp"
#include "annotations.hpp"
#include "pipeline.hpp"

#endif
