#pragma once

#include "amarl/model.hpp"

namespace amarl::fixtures {

/// Five-state two-agent game whose quotient collapses the three a-labelled
/// states: v0 and v1 shuttle deterministically, v1 can hand off to v2, and
/// v2 either idles or commits to the probabilistic exit 0.7/0.3 onto the
/// absorbing b and c states. Only the diagonal joint actions exist.
inline MarkovGame fig3_model() {
  MarkovGameBuilder b(2, {{"x", "y"}, {"x", "y"}});
  b.set_gamma(0.95);
  const AtomId a = b.intern_atom("a");
  const AtomId bb = b.intern_atom("b");
  const AtomId cc = b.intern_atom("c");
  const StateId v0 = b.add_state("v0", {a});
  const StateId v1 = b.add_state("v1", {a});
  const StateId v2 = b.add_state("v2", {a});
  const StateId v3 = b.add_state("v3", {bb});
  const StateId v4 = b.add_state("v4", {cc});
  b.declare_partition({{}, {}}, {a, bb, cc});
  const JointActionId xx = 0, yy = 3;
  b.add_row(v0, xx, {{v1, 1.0}});
  b.add_row(v1, xx, {{v0, 1.0}});
  b.add_row(v1, yy, {{v2, 1.0}});
  b.add_row(v2, xx, {{v3, 0.7}, {v4, 0.3}});
  b.add_row(v2, yy, {{v2, 1.0}});
  b.add_row(v3, xx, {{v3, 1.0}});
  b.add_row(v4, xx, {{v4, 1.0}});
  b.set_initial(v0);
  return b.finalize();
}

}  // namespace amarl::fixtures
