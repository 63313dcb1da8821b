#pragma once

#include "adam.hpp"
#include "checkpoint.hpp"
#include "corruption.hpp"
#include "dataset.hpp"
#include "dataset_io.hpp"
#include "embedding.hpp"
#include "errors.hpp"
#include "evaluation.hpp"
#include "losses.hpp"
#include "navigation.hpp"
#include "proxies.hpp"
#include "report.hpp"
#include "synth.hpp"
#include "trainer.hpp"
