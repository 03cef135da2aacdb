#pragma once

#include "wordpref/analysis.hpp"
#include "wordpref/commands.hpp"
#include "wordpref/contrast.hpp"
#include "wordpref/error.hpp"
#include "wordpref/manifest.hpp"
#include "wordpref/ngram.hpp"
#include "wordpref/ratings.hpp"
#include "wordpref/report.hpp"
#include "wordpref/scoring.hpp"
#include "wordpref/stats.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/synth.hpp"
#include "wordpref/util.hpp"
