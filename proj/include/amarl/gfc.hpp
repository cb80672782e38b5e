#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "amarl/model_io.hpp"
#include "amarl/quotient.hpp"

namespace amarl {

/// Grid flag-collection domain. Agents walk a rectangular grid carved into
/// named areas. Area changes are only possible between door cells of the
/// same area pair; monitored pairs capture the crossing agent with a
/// probability depending on how exposed the destination door cell is.
/// Flags are picked up by entering their cell; entering the goal area
/// finishes the agent. Captured and finished agents can only idle.

struct GridArea {
  std::string name;
  std::vector<std::array<int, 4>> rects;  // x0, y0, x1, y1 inclusive
};

struct GridDoor {
  int x = 0, y = 0;
  std::string area_a, area_b;
  int exposure = 0;  // 0 hidden, 1 partial, 2 direct
};

struct GridCamera {
  std::string area_a, area_b;
  double direct = 0.0, partial = 0.0, hidden = 0.0;
};

struct GridFlag {
  std::string name;
  int x = 0, y = 0;
};

struct GridSpec {
  std::string name;
  int n_agents = 1;
  int width = 0, height = 0;
  std::vector<GridArea> areas;
  std::vector<GridDoor> doors;
  std::vector<GridCamera> cameras;
  std::vector<GridFlag> flags;
  std::vector<std::pair<int, int>> spawns;
  std::string goal_area;
  int max_steps = 100;
  double gamma = 0.95;
};

inline int exposure_ord(const std::string& s) {
  if (s == "hidden") return 0;
  if (s == "partial") return 1;
  if (s == "direct") return 2;
  throw ParseError("unknown exposure level " + s);
}

inline const char* exposure_name(int ord) {
  static const char* names[] = {"hidden", "partial", "direct"};
  if (ord < 0 || ord > 2) throw ModelError("exposure ordinal out of range");
  return names[ord];
}

inline GridSpec load_grid(const json& j) {
  GridSpec s;
  s.name = j.value("name", "grid");
  s.n_agents = j.at("n_agents").get<int>();
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  for (const auto& ja : j.at("areas")) {
    GridArea a;
    a.name = ja.at("name").get<std::string>();
    for (const auto& jr : ja.at("rects"))
      a.rects.push_back({jr.at(0).get<int>(), jr.at(1).get<int>(),
                         jr.at(2).get<int>(), jr.at(3).get<int>()});
    s.areas.push_back(std::move(a));
  }
  for (const auto& jd : j.at("doors")) {
    GridDoor d;
    d.x = jd.at("cell").at(0).get<int>();
    d.y = jd.at("cell").at(1).get<int>();
    d.area_a = jd.at("pair").at(0).get<std::string>();
    d.area_b = jd.at("pair").at(1).get<std::string>();
    d.exposure = jd.contains("exposure")
                     ? exposure_ord(jd.at("exposure").get<std::string>())
                     : 0;
    s.doors.push_back(std::move(d));
  }
  for (const auto& jc : j.value("cameras", json::array())) {
    GridCamera c;
    c.area_a = jc.at("pair").at(0).get<std::string>();
    c.area_b = jc.at("pair").at(1).get<std::string>();
    c.direct = jc.at("direct").get<double>();
    c.partial = jc.at("partial").get<double>();
    c.hidden = jc.at("hidden").get<double>();
    s.cameras.push_back(std::move(c));
  }
  for (const auto& jf : j.value("flags", json::array()))
    s.flags.push_back({jf.at("name").get<std::string>(), jf.at("cell").at(0).get<int>(),
                       jf.at("cell").at(1).get<int>()});
  for (const auto& js : j.at("spawns"))
    s.spawns.emplace_back(js.at(0).get<int>(), js.at(1).get<int>());
  s.goal_area = j.at("goal_area").get<std::string>();
  s.max_steps = j.value("max_steps", 100);
  s.gamma = j.value("gamma", 0.95);
  return s;
}

inline GridSpec load_grid_file(const std::string& path) {
  return load_grid(detail::read_json_file(path));
}

namespace gfc_detail {

constexpr std::uint64_t kGfcCapacity = 2000000;

struct Geometry {
  int n_areas = 0;
  int goal_area = -1;
  int n_cells = 0;
  std::vector<int> cell_at;                  // y*width+x -> cell or -1
  std::vector<std::pair<int, int>> cells;    // cell -> (x, y)
  std::vector<int> area_of;                  // cell -> area
  std::vector<int> flag_at;                  // cell -> flag or -1
  std::vector<int> door_pair;                // cell -> pair key or -1
  std::vector<int> door_exposure;            // cell -> exposure ordinal
  std::unordered_map<int, std::array<double, 3>> camera;  // pair -> prob by ordinal

  int pair_key(int a, int b) const {
    if (a > b) std::swap(a, b);
    return a * n_areas + b;
  }
  int cell(int x, int y, int width) const {
    return cell_at[static_cast<std::size_t>(y) * width + x];
  }
  double capture_prob(int pair, int exposure) const {
    auto it = camera.find(pair);
    return it == camera.end() ? 0.0 : it->second[static_cast<std::size_t>(exposure)];
  }
};

inline int area_index(const GridSpec& s, const std::string& name) {
  for (std::size_t i = 0; i < s.areas.size(); ++i)
    if (s.areas[i].name == name) return static_cast<int>(i);
  return -1;
}

}  // namespace gfc_detail

inline std::vector<std::string> grid_problems(const GridSpec& s) {
  using gfc_detail::area_index;
  std::vector<std::string> out;
  auto bad = [&](const std::string& m) { out.push_back(m); };
  if (s.width <= 0 || s.height <= 0) bad("grid dimensions must be positive");
  if (s.n_agents < 1) bad("n_agents must be at least 1");
  if (s.max_steps <= 0) bad("max_steps must be positive");
  if (s.gamma <= 0.0 || s.gamma > 1.0) bad("gamma must lie in (0, 1]");

  std::vector<int> owner(static_cast<std::size_t>(std::max(0, s.width * s.height)), -1);
  for (std::size_t ai = 0; ai < s.areas.size(); ++ai) {
    for (const auto& r : s.areas[ai].rects) {
      if (r[0] > r[2] || r[1] > r[3] || r[0] < 0 || r[1] < 0 || r[2] >= s.width ||
          r[3] >= s.height) {
        bad("area " + s.areas[ai].name + " has a rect outside the grid");
        continue;
      }
      for (int y = r[1]; y <= r[3]; ++y)
        for (int x = r[0]; x <= r[2]; ++x) {
          auto& o = owner[static_cast<std::size_t>(y) * s.width + x];
          if (o >= 0 && o != static_cast<int>(ai))
            bad("cell (" + std::to_string(x) + "," + std::to_string(y) +
                ") belongs to two areas");
          o = static_cast<int>(ai);
        }
    }
  }
  auto area_at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= s.width || y >= s.height) return -1;
    return owner[static_cast<std::size_t>(y) * s.width + x];
  };

  const int goal = area_index(s, s.goal_area);
  if (goal < 0) bad("goal area " + s.goal_area + " is not defined");

  std::vector<std::string> pair_seen;
  for (const auto& d : s.doors) {
    const int a = area_index(s, d.area_a);
    const int b = area_index(s, d.area_b);
    if (a < 0 || b < 0 || a == b) {
      bad("door at (" + std::to_string(d.x) + "," + std::to_string(d.y) +
          ") names a bad area pair");
      continue;
    }
    const int own = area_at(d.x, d.y);
    if (own != a && own != b)
      bad("door cell (" + std::to_string(d.x) + "," + std::to_string(d.y) +
          ") lies outside its pair");
  }
  {
    std::vector<std::pair<int, int>> seen;
    for (const auto& d : s.doors) {
      if (std::find(seen.begin(), seen.end(), std::pair<int, int>{d.x, d.y}) !=
          seen.end())
        bad("cell (" + std::to_string(d.x) + "," + std::to_string(d.y) +
            ") has two door records");
      seen.emplace_back(d.x, d.y);
    }
  }
  for (const auto& c : s.cameras) {
    if (area_index(s, c.area_a) < 0 || area_index(s, c.area_b) < 0)
      bad("camera names unknown areas " + c.area_a + "|" + c.area_b);
    for (double p : {c.direct, c.partial, c.hidden})
      if (p < 0.0 || p > 1.0) bad("camera probability out of range");
    const std::string key = c.area_a < c.area_b ? c.area_a + "|" + c.area_b
                                                : c.area_b + "|" + c.area_a;
    if (std::find(pair_seen.begin(), pair_seen.end(), key) != pair_seen.end())
      bad("duplicate camera for pair " + key);
    pair_seen.push_back(key);
  }
  {
    std::vector<std::string> names;
    for (const auto& f : s.flags) {
      if (std::find(names.begin(), names.end(), f.name) != names.end())
        bad("duplicate flag name " + f.name);
      names.push_back(f.name);
      const int a = area_at(f.x, f.y);
      if (a < 0)
        bad("flag " + f.name + " is off the map");
      else if (a == goal)
        bad("flag " + f.name + " lies in the goal area");
      for (const auto& sp : s.spawns)
        if (sp.first == f.x && sp.second == f.y)
          bad("flag " + f.name + " sits on a spawn cell");
      for (const auto& d : s.doors)
        if (d.x == f.x && d.y == f.y)
          bad("flag " + f.name + " sits on a door cell");
    }
  }
  if (static_cast<int>(s.spawns.size()) != s.n_agents)
    bad("spawn count differs from n_agents");
  for (const auto& sp : s.spawns) {
    const int a = area_at(sp.first, sp.second);
    if (a < 0)
      bad("spawn (" + std::to_string(sp.first) + "," + std::to_string(sp.second) +
          ") is off the map");
    else if (a == goal)
      bad("spawn inside the goal area");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace gfc_detail {

inline Geometry resolve(const GridSpec& s) {
  const auto problems = grid_problems(s);
  if (!problems.empty())
    throw ModelError("grid spec " + s.name + ": " + problems.front() +
                     (problems.size() > 1 ? " (and more)" : ""));
  Geometry g;
  g.n_areas = static_cast<int>(s.areas.size());
  g.goal_area = area_index(s, s.goal_area);
  g.cell_at.assign(static_cast<std::size_t>(s.width) * s.height, -1);
  std::vector<int> owner(g.cell_at.size(), -1);
  for (std::size_t ai = 0; ai < s.areas.size(); ++ai)
    for (const auto& r : s.areas[ai].rects)
      for (int y = r[1]; y <= r[3]; ++y)
        for (int x = r[0]; x <= r[2]; ++x)
          owner[static_cast<std::size_t>(y) * s.width + x] = static_cast<int>(ai);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * s.width + x;
      if (owner[o] < 0) continue;
      g.cell_at[o] = g.n_cells++;
      g.cells.emplace_back(x, y);
      g.area_of.push_back(owner[o]);
    }
  g.flag_at.assign(g.n_cells, -1);
  for (std::size_t f = 0; f < s.flags.size(); ++f)
    g.flag_at[g.cell(s.flags[f].x, s.flags[f].y, s.width)] = static_cast<int>(f);
  g.door_pair.assign(g.n_cells, -1);
  g.door_exposure.assign(g.n_cells, 0);
  for (const auto& d : s.doors) {
    const int c = g.cell(d.x, d.y, s.width);
    g.door_pair[c] = g.pair_key(area_index(s, d.area_a), area_index(s, d.area_b));
    g.door_exposure[c] = d.exposure;
  }
  for (const auto& c : s.cameras)
    g.camera[g.pair_key(area_index(s, c.area_a), area_index(s, c.area_b))] = {
        c.hidden, c.partial, c.direct};
  return g;
}

/// Interned atoms for one spec: per-agent area/captured/goal atoms plus the
/// shared flag and group atoms. The goal area has no area atom; reaching it
/// is the goal_i label.
struct Atoms {
  AtomTable table;
  std::vector<std::vector<AtomId>> area;  // [agent][area], kNoAtom for goal
  std::vector<AtomId> captured, goal;     // per agent
  std::vector<AtomId> flag;               // per flag
  AtomId captured_all = 0, goal_all = 0, end_all = 0;
  std::vector<std::vector<AtomId>> ap_agent;
  std::vector<AtomId> ap_all;
};

constexpr AtomId kNoAtom = 0xffffffffu;

inline Atoms make_atoms(const GridSpec& s, const Geometry& g) {
  Atoms a;
  a.area.resize(s.n_agents);
  a.ap_agent.resize(s.n_agents);
  for (int i = 0; i < s.n_agents; ++i) {
    const std::string suffix = "_" + std::to_string(i + 1);
    a.area[i].assign(g.n_areas, kNoAtom);
    for (int ar = 0; ar < g.n_areas; ++ar) {
      if (ar == g.goal_area) continue;
      a.area[i][ar] = a.table.intern("area" + suffix + "=" + s.areas[ar].name);
      a.ap_agent[i].push_back(a.area[i][ar]);
    }
    a.captured.push_back(a.table.intern("captured" + suffix));
    a.goal.push_back(a.table.intern("goal" + suffix));
    a.ap_agent[i].push_back(a.captured[i]);
    a.ap_agent[i].push_back(a.goal[i]);
  }
  for (const auto& f : s.flags) {
    a.flag.push_back(a.table.intern("flag_" + f.name));
    a.ap_all.push_back(a.flag.back());
  }
  a.captured_all = a.table.intern("captured_all");
  a.goal_all = a.table.intern("goal_all");
  a.end_all = a.table.intern("end_all");
  a.ap_all.push_back(a.captured_all);
  a.ap_all.push_back(a.goal_all);
  a.ap_all.push_back(a.end_all);
  return a;
}

/// Labels from per-agent area codes (n_areas = captured, n_areas+1 = goal)
/// and the mask of still-present flags.
inline LabelSet labels_for(const Atoms& at, const Geometry& g,
                           const std::vector<int>& code, std::uint32_t flags) {
  std::vector<AtomId> l;
  bool all_cap = true, all_goal = true, all_end = true;
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] == g.n_areas) {
      l.push_back(at.captured[i]);
      all_goal = false;
    } else if (code[i] == g.n_areas + 1) {
      l.push_back(at.goal[i]);
      all_cap = false;
    } else {
      l.push_back(at.area[i][code[i]]);
      all_cap = all_goal = all_end = false;
    }
  }
  for (std::size_t f = 0; f < at.flag.size(); ++f)
    if (flags & (1u << f)) l.push_back(at.flag[f]);
  if (all_cap) l.push_back(at.captured_all);
  if (all_goal) l.push_back(at.goal_all);
  if (all_end) l.push_back(at.end_all);
  return make_label_set(std::move(l));
}

inline std::vector<std::vector<std::string>> move_axes(int n_agents) {
  std::vector<std::vector<std::string>> axes;
  for (int i = 0; i < n_agents; ++i)
    axes.push_back({"n", "e", "s", "w", "stay"});
  return axes;
}

constexpr int kDx[4] = {0, 1, 0, -1};
constexpr int kDy[4] = {-1, 0, 1, 0};
constexpr ActionId kStay = 4;

}  // namespace gfc_detail

struct GfcBuild {
  MarkovGame game;
  std::vector<std::vector<int>> positions;  // state -> per-agent position code
  std::vector<std::uint32_t> flag_mask;     // state -> present flags
  int n_cells = 0;                          // codes n_cells / n_cells+1 = cap / goal
  std::vector<int> area_code;               // position code -> area / cap / goal code
  std::uint32_t n_flags = 0;
};

/// Explicit game for a grid spec, restricted to the states reachable from
/// the spawn configuration. Throws when the position/flag bound
/// (cells+2)^agents * 2^flags exceeds the build capacity.
inline GfcBuild build_mg(const GridSpec& spec) {
  using namespace gfc_detail;
  const Geometry g = resolve(spec);
  const Atoms at = make_atoms(spec, g);
  const std::uint64_t base = static_cast<std::uint64_t>(g.n_cells) + 2;
  double bound = std::pow(static_cast<double>(base), spec.n_agents) *
                 std::pow(2.0, static_cast<double>(spec.flags.size()));
  if (bound > static_cast<double>(kGfcCapacity))
    throw ModelError("grid spec " + spec.name + " bound " +
                     std::to_string(static_cast<std::uint64_t>(bound)) +
                     " exceeds the build capacity " + std::to_string(kGfcCapacity));

  const int CAP = g.n_cells, GOAL = g.n_cells + 1;
  auto pack = [&](const std::vector<int>& pos, std::uint32_t flags) {
    std::uint64_t k = 0;
    for (int p : pos) k = k * base + static_cast<std::uint64_t>(p);
    return (k << spec.flags.size()) | flags;
  };
  auto name_of = [&](const std::vector<int>& pos, std::uint32_t flags) {
    std::string n;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (i) n += ";";
      if (pos[i] == CAP)
        n += "CAP";
      else if (pos[i] == GOAL)
        n += "GOAL";
      else
        n += "(" + std::to_string(g.cells[pos[i]].first) + "," +
             std::to_string(g.cells[pos[i]].second) + ")";
    }
    n += "|";
    for (std::size_t f = 0; f < spec.flags.size(); ++f)
      if (flags & (1u << f)) n += spec.flags[f].name;
    return n;
  };
  auto code_of = [&](int pos) {
    if (pos == CAP) return g.n_areas;
    if (pos == GOAL) return g.n_areas + 1;
    return g.area_of[pos];
  };

  MarkovGameBuilder bld(spec.n_agents, move_axes(spec.n_agents));
  bld.set_gamma(spec.gamma);
  for (int i = 0; i < spec.n_agents; ++i) bld.set_idle(i, kStay);
  for (AtomId aid = 0; aid < at.table.size(); ++aid) bld.intern_atom(at.table.name(aid));
  bld.declare_partition(at.ap_agent, at.ap_all);

  GfcBuild out;
  out.n_cells = g.n_cells;
  out.area_code = g.area_of;
  out.area_code.push_back(g.n_areas);      // captured
  out.area_code.push_back(g.n_areas + 1);  // at goal
  out.n_flags = static_cast<std::uint32_t>(spec.flags.size());
  std::unordered_map<std::uint64_t, StateId> index;
  std::vector<int> init_pos;
  for (const auto& sp : spec.spawns)
    init_pos.push_back(g.cell(sp.first, sp.second, spec.width));
  const std::uint32_t init_flags = (1u << spec.flags.size()) - 1;

  auto state_of = [&](const std::vector<int>& pos, std::uint32_t flags) {
    const std::uint64_t key = pack(pos, flags);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    std::vector<int> code(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) code[i] = code_of(pos[i]);
    const StateId id = bld.add_state(name_of(pos, flags), labels_for(at, g, code, flags));
    index.emplace(key, id);
    out.positions.push_back(pos);
    out.flag_mask.push_back(flags);
    return id;
  };

  const StateId init = state_of(init_pos, init_flags);
  bld.set_initial(init);

  struct Component {
    ActionId a = kStay;
    int dst = -1;       // position code after the move (ignoring capture)
    double d = 0.0;     // capture probability
    bool cross = false;
    int exposure = 0;
  };

  for (StateId s = 0; s < out.positions.size(); ++s) {
    const std::vector<int> pos = out.positions[s];
    const std::uint32_t flags = out.flag_mask[s];
    std::vector<std::vector<Component>> choice(spec.n_agents);
    for (int i = 0; i < spec.n_agents; ++i) {
      choice[i].push_back({kStay, pos[i], 0.0, false, 0});
      if (pos[i] == CAP || pos[i] == GOAL) continue;
      const auto [x, y] = g.cells[pos[i]];
      for (ActionId a = 0; a < 4; ++a) {
        const int nx = x + kDx[a], ny = y + kDy[a];
        if (nx < 0 || ny < 0 || nx >= spec.width || ny >= spec.height) continue;
        const int v = g.cell(nx, ny, spec.width);
        if (v < 0) continue;
        const int au = g.area_of[pos[i]], av = g.area_of[v];
        if (au == av) {
          choice[i].push_back({a, v, 0.0, false, 0});
          continue;
        }
        const int key = g.pair_key(au, av);
        if (g.door_pair[pos[i]] != key || g.door_pair[v] != key) continue;
        Component c{a, av == g.goal_area ? GOAL : v,
                    g.capture_prob(key, g.door_exposure[v]), true,
                    g.door_exposure[v]};
        choice[i].push_back(c);
      }
    }

    std::vector<std::size_t> pick(spec.n_agents, 0);
    while (true) {
      JointActionId joint = 0;
      for (int i = 0; i < spec.n_agents; ++i)
        joint = joint * 5 + choice[i][pick[i]].a;
      std::vector<int> crossers;
      for (int i = 0; i < spec.n_agents; ++i)
        if (choice[i][pick[i]].cross && choice[i][pick[i]].d > 0.0)
          crossers.push_back(i);

      struct Outcome {
        double p;
        StateId to;
        std::vector<double> reward;
      };
      std::unordered_map<StateId, Outcome> row;
      for (std::uint32_t capbits = 0; capbits < (1u << crossers.size()); ++capbits) {
        double p = 1.0;
        std::vector<int> npos(pos);
        for (int i = 0; i < spec.n_agents; ++i) npos[i] = choice[i][pick[i]].dst;
        for (std::size_t k = 0; k < crossers.size(); ++k) {
          const double d = choice[crossers[k]][pick[crossers[k]]].d;
          if (capbits & (1u << k)) {
            p *= d;
            npos[crossers[k]] = CAP;
          } else {
            p *= 1.0 - d;
          }
        }
        std::vector<double> reward(spec.n_agents, 0.0);
        std::uint32_t nflags = flags;
        for (std::size_t f = 0; f < spec.flags.size(); ++f) {
          if (!(nflags & (1u << f))) continue;
          const int fc = g.cell(spec.flags[f].x, spec.flags[f].y, spec.width);
          int picker = -1;
          for (int i = 0; i < spec.n_agents; ++i)
            if (npos[i] == fc) {
              picker = i;
              break;
            }
          if (picker >= 0) {
            nflags &= ~(1u << f);
            reward[picker] += 1.0;
          }
        }
        for (int i = 0; i < spec.n_agents; ++i)
          if (npos[i] == GOAL && pos[i] != GOAL) reward[i] += 1.0;
        const StateId to = state_of(npos, nflags);
        auto [it, fresh] = row.emplace(to, Outcome{p, to, reward});
        if (!fresh) it->second.p += p;
      }

      std::vector<TransitionEntry> ents;
      for (const auto& [to, o] : row) ents.push_back({to, o.p});
      std::sort(ents.begin(), ents.end(),
                [](const TransitionEntry& a, const TransitionEntry& b) {
                  return a.to < b.to;
                });
      std::optional<RiskTag> tag;
      bool any_cross = false;
      for (int i = 0; i < spec.n_agents; ++i) any_cross |= choice[i][pick[i]].cross;
      if (any_cross) {
        std::string family;
        int rank = 0, scale = 1;
        for (int i = 0; i < spec.n_agents; ++i) {
          if (i) family += "|";
          const Component& c = choice[i][pick[i]];
          if (c.cross) {
            const int dst_area = c.dst == GOAL ? g.goal_area : g.area_of[c.dst];
            family += spec.areas[g.area_of[pos[i]]].name + ">" +
                      spec.areas[dst_area].name;
            if (c.dst != GOAL && g.flag_at[c.dst] >= 0 &&
                (flags & (1u << g.flag_at[c.dst])))
              family += "+" + spec.flags[g.flag_at[c.dst]].name;
            rank += c.exposure * scale;
          } else {
            if (c.dst != pos[i] && g.flag_at[c.dst] >= 0 &&
                (flags & (1u << g.flag_at[c.dst])))
              family += "+" + spec.flags[g.flag_at[c.dst]].name;
            else
              family += ".";
          }
          scale *= 3;
        }
        tag = RiskTag{family, rank};
      }
      bld.add_row(s, joint, ents, tag);
      for (const auto& [to, o] : row) {
        bool any = false;
        for (double r : o.reward) any |= r != 0.0;
        if (any) bld.set_reward(s, joint, to, o.reward);
      }

      int i = spec.n_agents - 1;
      while (i >= 0 && ++pick[i] == choice[i].size()) pick[i--] = 0;
      if (i < 0) break;
    }
  }
  out.game = bld.finalize();
  return out;
}

struct GfcDirect {
  AmgPair pair;
  std::unordered_map<std::uint64_t, BlockId> block_of_key;
  int n_areas = 0;  // codes n_areas / n_areas+1 = cap / goal

  std::uint64_t key_of(const std::vector<int>& code, std::uint32_t flags,
                       std::size_t n_flags) const {
    std::uint64_t k = 0;
    for (int c : code) k = k * (static_cast<std::uint64_t>(n_areas) + 2) + c;
    return (k << n_flags) | flags;
  }
};

/// Abstract game pair built straight from the grid spec, without touching
/// the concrete state space: abstract states are per-agent area/status
/// profiles plus the flag set, options are joint combinations of stay,
/// pickup, and area crossings. Crossing variants enumerate the destination
/// exposures reachable through adjacent door-cell pairs.
inline GfcDirect direct_amg(const GridSpec& spec) {
  using namespace gfc_detail;
  const Geometry g = resolve(spec);
  const Atoms at = make_atoms(spec, g);
  const int ACAP = g.n_areas, AGOAL = g.n_areas + 1;

  // pair key -> exposures of B-side cells adjacent to an A-side cell, per side
  std::unordered_map<int, std::array<std::vector<int>, 2>> crossings;
  for (int c = 0; c < g.n_cells; ++c) {
    if (g.door_pair[c] < 0) continue;
    const auto [x, y] = g.cells[c];
    for (int dir = 0; dir < 4; ++dir) {
      const int nx = x + kDx[dir], ny = y + kDy[dir];
      if (nx < 0 || ny < 0 || nx >= spec.width || ny >= spec.height) continue;
      const int v = g.cell(nx, ny, spec.width);
      if (v < 0 || g.door_pair[v] != g.door_pair[c]) continue;
      if (g.area_of[v] == g.area_of[c]) continue;
      // moving c -> v crosses; record v's exposure under the source side
      const int key = g.door_pair[c];
      const int lo = std::min(g.area_of[c], g.area_of[v]);
      const int side = g.area_of[c] == lo ? 0 : 1;
      auto& ex = crossings[key][side];
      if (std::find(ex.begin(), ex.end(), g.door_exposure[v]) == ex.end())
        ex.push_back(g.door_exposure[v]);
    }
  }
  for (auto& [key, sides] : crossings)
    for (auto& ex : sides) std::sort(ex.begin(), ex.end());

  GfcDirect out;
  out.n_areas = g.n_areas;

  struct AbsState {
    std::vector<int> code;
    std::uint32_t flags;
  };
  std::vector<AbsState> states;
  std::vector<LabelSet> labels;
  std::vector<std::string> names;
  auto name_of = [&](const std::vector<int>& code, std::uint32_t flags) {
    std::string n;
    for (std::size_t i = 0; i < code.size(); ++i) {
      if (i) n += ";";
      if (code[i] == ACAP)
        n += "CAP";
      else if (code[i] == AGOAL)
        n += "GOAL";
      else
        n += spec.areas[code[i]].name;
    }
    n += "|";
    for (std::size_t f = 0; f < spec.flags.size(); ++f)
      if (flags & (1u << f)) n += spec.flags[f].name;
    return n;
  };
  auto state_of = [&](const std::vector<int>& code, std::uint32_t flags) {
    const std::uint64_t key = out.key_of(code, flags, spec.flags.size());
    auto it = out.block_of_key.find(key);
    if (it != out.block_of_key.end()) return it->second;
    const BlockId id = static_cast<BlockId>(states.size());
    out.block_of_key.emplace(key, id);
    states.push_back({code, flags});
    labels.push_back(labels_for(at, g, code, flags));
    names.push_back(name_of(code, flags));
    return id;
  };

  std::vector<int> init_code;
  for (const auto& sp : spec.spawns)
    init_code.push_back(g.area_of[g.cell(sp.first, sp.second, spec.width)]);
  const std::uint32_t init_flags = (1u << spec.flags.size()) - 1;
  const BlockId init = state_of(init_code, init_flags);

  struct Choice {
    enum Kind { Stay, Pickup, Cross } kind = Stay;
    int flag = -1;
    int dst_area = -1;
    int pair = -1;
    std::vector<int> exposures;
    std::string token(const GridSpec& s, int src_area) const {
      switch (kind) {
        case Stay: return ".";
        case Pickup: return "+" + s.flags[flag].name;
        case Cross: return s.areas[src_area].name + ">" + s.areas[dst_area].name;
      }
      return ".";
    }
  };

  std::vector<AbstractOption> options;
  for (BlockId b = 0; b < states.size(); ++b) {
    const std::vector<int> code = states[b].code;
    const std::uint32_t flags = states[b].flags;
    std::vector<std::vector<Choice>> choice(spec.n_agents);
    for (int i = 0; i < spec.n_agents; ++i) {
      choice[i].push_back({});
      if (code[i] >= g.n_areas) continue;
      for (std::size_t f = 0; f < spec.flags.size(); ++f) {
        if (!(flags & (1u << f))) continue;
        const int fc = g.cell(spec.flags[f].x, spec.flags[f].y, spec.width);
        if (g.area_of[fc] == code[i])
          choice[i].push_back({Choice::Pickup, static_cast<int>(f), -1, -1, {}});
      }
      for (const auto& [key, sides] : crossings) {
        const int lo = key / g.n_areas, hi = key % g.n_areas;
        int other = -1, side = -1;
        if (code[i] == lo) {
          other = hi;
          side = 0;
        } else if (code[i] == hi) {
          other = lo;
          side = 1;
        } else {
          continue;
        }
        if (sides[side].empty()) continue;
        choice[i].push_back({Choice::Cross, -1, other, key, sides[side]});
      }
      std::sort(choice[i].begin() + 1, choice[i].end(),
                [&](const Choice& a, const Choice& c) {
                  if (a.kind != c.kind) return a.kind < c.kind;
                  if (a.kind == Choice::Pickup) return a.flag < c.flag;
                  return a.dst_area < c.dst_area;
                });
    }

    std::vector<AbstractOption> local;
    std::vector<std::size_t> pick(spec.n_agents, 0);
    while (true) {
      bool all_stay = true;
      for (int i = 0; i < spec.n_agents; ++i)
        all_stay &= choice[i][pick[i]].kind == Choice::Stay;
      if (!all_stay) {
        AbstractOption ao;
        ao.source = b;
        std::vector<int> crossers;
        for (int i = 0; i < spec.n_agents; ++i) {
          if (i) ao.family += "|";
          ao.family += choice[i][pick[i]].token(spec, code[i]);
          if (choice[i][pick[i]].kind == Choice::Cross) crossers.push_back(i);
        }
        ao.tagged = !crossers.empty();

        std::vector<std::size_t> epick(crossers.size(), 0);
        while (true) {
          OptionVariant var;
          int scale = 1;
          for (int i = 0; i < spec.n_agents; ++i) {
            if (choice[i][pick[i]].kind == Choice::Cross) {
              const std::size_t ci =
                  std::find(crossers.begin(), crossers.end(), i) - crossers.begin();
              var.rank += choice[i][pick[i]].exposures[epick[ci]] * scale;
            }
            scale *= 3;
          }
          var.count = 1;
          // outcomes over capture subsets of monitored crossers
          std::vector<int> risky;
          std::vector<double> dprob;
          for (std::size_t ci = 0; ci < crossers.size(); ++ci) {
            const Choice& c = choice[crossers[ci]][pick[crossers[ci]]];
            const double d = g.capture_prob(c.pair, c.exposures[epick[ci]]);
            if (d > 0.0) {
              risky.push_back(crossers[ci]);
              dprob.push_back(d);
            }
          }
          std::unordered_map<BlockId, std::pair<double, double>> acc;  // to -> (p, reward)
          for (std::uint32_t capbits = 0; capbits < (1u << risky.size()); ++capbits) {
            double p = 1.0;
            std::vector<int> ncode(code);
            std::uint32_t nflags = flags;
            double rew = 0.0;
            for (int i = 0; i < spec.n_agents; ++i) {
              const Choice& c = choice[i][pick[i]];
              if (c.kind == Choice::Cross)
                ncode[i] = c.dst_area == g.goal_area ? AGOAL : c.dst_area;
            }
            for (std::size_t k = 0; k < risky.size(); ++k) {
              if (capbits & (1u << k)) {
                p *= dprob[k];
                ncode[risky[k]] = ACAP;
              } else {
                p *= 1.0 - dprob[k];
              }
            }
            for (int i = 0; i < spec.n_agents; ++i) {
              const Choice& c = choice[i][pick[i]];
              if (c.kind == Choice::Pickup && (nflags & (1u << c.flag))) {
                nflags &= ~(1u << c.flag);
                rew += 1.0;
              }
              if (c.kind == Choice::Cross && ncode[i] == AGOAL) rew += 1.0;
            }
            const BlockId to = state_of(ncode, nflags);
            auto [it, fresh] = acc.emplace(to, std::pair<double, double>{p, rew});
            if (!fresh) it->second.first += p;
          }
          for (const auto& [to, pr] : acc) var.cd.emplace_back(to, pr.first);
          std::sort(var.cd.begin(), var.cd.end());
          for (const auto& [to, mass] : var.cd) var.reward.push_back(acc.at(to).second);
          ao.variants.push_back(std::move(var));

          std::int64_t ci = static_cast<std::int64_t>(crossers.size()) - 1;
          while (ci >= 0 &&
                 ++epick[ci] ==
                     choice[crossers[ci]][pick[crossers[ci]]].exposures.size())
            epick[ci--] = 0;
          if (ci < 0) break;
        }
        std::sort(ao.variants.begin(), ao.variants.end(),
                  [](const OptionVariant& a, const OptionVariant& v) {
                    return a.rank < v.rank;
                  });
        ao.safe_idx = static_cast<int>(ao.variants.size()) - 1;
        ao.opt_idx = 0;
        std::vector<BlockId> sup;
        for (const OptionVariant& v : ao.variants)
          for (const auto& [c, pr] : v.cd) sup.push_back(c);
        std::sort(sup.begin(), sup.end());
        sup.erase(std::unique(sup.begin(), sup.end()), sup.end());
        ao.support = std::move(sup);

        bool duplicate = false;
        if (!ao.tagged) {
          for (const AbstractOption& prev : local)
            if (!prev.tagged && cd_equal(prev.variants[0].cd, ao.variants[0].cd)) {
              duplicate = true;
              break;
            }
        }
        if (!duplicate) local.push_back(std::move(ao));
      }
      int i = spec.n_agents - 1;
      while (i >= 0 && ++pick[i] == choice[i].size()) pick[i--] = 0;
      if (i < 0) break;
    }
    // Every profile can hold position forever (all agents idling), so each
    // abstract state carries the matching self-loop option.
    AbstractOption stay;
    stay.family = "stay";
    stay.source = b;
    stay.variants.push_back({0, {{b, 1.0}}, {0.0}, 0, 0, 1});
    stay.support = {b};
    local.push_back(std::move(stay));
    for (AbstractOption& ao : local) {
      ao.name = names[b] + "/" + ao.family;
      options.push_back(std::move(ao));
    }
  }

  out.pair = assemble_amg_pair(spec.n_agents, spec.gamma, at.table, at.ap_agent,
                               at.ap_all, labels, names, init, std::move(options),
                               {}, {});
  return out;
}

/// Concrete state -> abstract block of the direct construction.
inline std::vector<BlockId> abstraction_map(const GridSpec& spec,
                                            const GfcBuild& build,
                                            const GfcDirect& dir) {
  using namespace gfc_detail;
  const Geometry g = resolve(spec);
  std::vector<BlockId> map(build.game.n_states());
  for (StateId s = 0; s < build.game.n_states(); ++s) {
    std::vector<int> code(build.positions[s].size());
    for (std::size_t i = 0; i < code.size(); ++i) {
      const int p = build.positions[s][i];
      if (p == build.n_cells)
        code[i] = g.n_areas;
      else if (p == build.n_cells + 1)
        code[i] = g.n_areas + 1;
      else
        code[i] = g.area_of[p];
    }
    auto it = dir.block_of_key.find(
        dir.key_of(code, build.flag_mask[s], spec.flags.size()));
    if (it == dir.block_of_key.end())
      throw ModelError("concrete state " + build.game.state_name(s) +
                       " has no abstract counterpart");
    map[s] = it->second;
  }
  return map;
}

/// Fills block membership metadata of a direct pair from a concrete build.
inline void attach_members(GfcDirect& dir, const GridSpec& spec,
                           const GfcBuild& build) {
  const std::vector<BlockId> map = abstraction_map(spec, build, dir);
  std::vector<std::vector<StateId>> members(dir.pair.safe.game.n_states());
  for (StateId s = 0; s < build.game.n_states(); ++s) members[map[s]].push_back(s);
  std::vector<double> weights(build.game.n_states(), 0.0);
  for (StateId s = 0; s < build.game.n_states(); ++s)
    weights[s] = 1.0 / static_cast<double>(members[map[s]].size());
  for (AbstractMG* amg : {&dir.pair.safe, &dir.pair.optimal}) {
    amg->block_members = members;
    amg->weights = weights;
  }
}

}  // namespace amarl
