#pragma once

#include "fstta/config.hpp"
#include "fstta/harness.hpp"

namespace fstta::testing {

/// A benchmark small enough to train in about a second.
inline RunConfig tiny_config() {
    RunConfig c = default_config();
    c.data.per_class = 24;
    c.data.heldout_per_class = 6;
    c.data.image_size = 8;
    c.data.k = 3;
    c.model.widths = {4, 8, 8};
    c.source.iterations = 60;
    c.source.batch_per_domain = 4;
    c.finetune.epochs = 4;
    c.stage2.batch_size = 16;
    c.replicates = {0, 1};
    return c;
}

/// Prepared tiny benchmark, built once per test binary.
inline const Prepared& tiny_prepared() {
    static const Prepared p = prepare(tiny_config());
    return p;
}

}  // namespace fstta::testing
