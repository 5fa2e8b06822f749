#pragma once

// Instances, file formats, vocabulary, batching and the synthetic generator.

#include "difd/corpus/batch.hpp"
#include "difd/corpus/bio.hpp"
#include "difd/corpus/instance.hpp"
#include "difd/corpus/jsonl.hpp"
#include "difd/corpus/semeval.hpp"
#include "difd/corpus/stats.hpp"
#include "difd/corpus/synthetic.hpp"
#include "difd/corpus/tokenizer.hpp"
#include "difd/corpus/vocab.hpp"
