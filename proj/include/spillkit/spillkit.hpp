#pragma once

#include "spillkit/error.hpp"
#include "spillkit/geometry.hpp"
#include "spillkit/metrics.hpp"
#include "spillkit/util.hpp"
#include "spillkit/image.hpp"
#include "spillkit/coco.hpp"
#include "spillkit/dedup.hpp"
#include "spillkit/splits.hpp"
#include "spillkit/mask.hpp"
#include "spillkit/prompts.hpp"
#include "spillkit/diffusion.hpp"
#include "spillkit/vlm.hpp"
#include "spillkit/tensor_store.hpp"
#include "spillkit/lora.hpp"
#include "spillkit/eval.hpp"
#include "spillkit/report.hpp"
#include "spillkit/monitor.hpp"
#include "spillkit/annotation.hpp"
#include "spillkit/config.hpp"
#include "spillkit/pipeline.hpp"
