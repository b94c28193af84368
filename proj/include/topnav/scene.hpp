#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "topnav/geometry.hpp"
#include "topnav/rng.hpp"

namespace topnav::sim {

inline constexpr int kNoRoom = -1;

/// 2D world grid. Immutable after construction / generation; row-major
/// cell storage, cell (cx,cy) spans [cx*res,(cx+1)*res) x [cy*res,(cy+1)*res).
struct Scene {
    std::string name;
    int width = 0;
    int height = 0;
    double resolution = 0.1;  // meters per cell
    std::vector<std::uint8_t> occ;  // 1 = occupied
    std::vector<double> tex;        // texture in [0,1]
    std::vector<int> room;          // room id, kNoRoom on occupied cells

    int idx(int cx, int cy) const { return cy * width + cx; }
    bool in_bounds_cell(int cx, int cy) const { return cx >= 0 && cx < width && cy >= 0 && cy < height; }
    bool in_bounds(double x, double y) const {
        return x >= 0.0 && y >= 0.0 && x < width * resolution && y < height * resolution;
    }
    int cell_of(double v) const { return static_cast<int>(std::floor(v / resolution)); }

    // Points outside the grid count as occupied.
    bool occupied_at(double x, double y) const {
        const int cx = cell_of(x), cy = cell_of(y);
        if (!in_bounds_cell(cx, cy)) return true;
        return occ[idx(cx, cy)] != 0;
    }

    Vec2 cell_center(int cx, int cy) const {
        return {(cx + 0.5) * resolution, (cy + 0.5) * resolution};
    }

    double width_m() const { return width * resolution; }
    double height_m() const { return height * resolution; }

    int room_at(double x, double y) const {
        const int cx = cell_of(x), cy = cell_of(y);
        if (!in_bounds_cell(cx, cy)) return kNoRoom;
        return room[idx(cx, cy)];
    }

    int num_rooms() const {
        int k = 0;
        for (int r : room) k = std::max(k, r + 1);
        return k;
    }
};

struct SceneSpec {
    int rooms = 1;
    int width = 32;
    int height = 32;
    double clutter = 0.0;  // fraction of free interior cells turned into obstacles
    double resolution = 0.1;
    std::string name = "scene";
};

/// Euclidean distance from (x,y) to the nearest occupied cell center minus
/// half the cell diagonal, floored at 0. Exact brute-force scan.
inline double clearance(const Scene& s, double x, double y) {
    const double half_diag = 0.5 * s.resolution * std::sqrt(2.0);
    double best2 = 1e300;
    for (int cy = 0; cy < s.height; ++cy) {
        for (int cx = 0; cx < s.width; ++cx) {
            if (!s.occ[s.idx(cx, cy)]) continue;
            const Vec2 c = s.cell_center(cx, cy);
            const double dx = c.x - x, dy = c.y - y;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best2) best2 = d2;
        }
    }
    if (best2 >= 1e300) return 1e300;
    return std::max(0.0, std::sqrt(best2) - half_diag);
}

/// Per-cell-center clearance field (same definition as clearance()); used by
/// planners that need many lookups. Two-pass over occupied cells via BFS-free
/// brute force is fine at these grid sizes.
inline std::vector<double> clearance_field(const Scene& s) {
    std::vector<Vec2> occ_centers;
    for (int cy = 0; cy < s.height; ++cy)
        for (int cx = 0; cx < s.width; ++cx)
            if (s.occ[s.idx(cx, cy)]) occ_centers.push_back(s.cell_center(cx, cy));
    const double half_diag = 0.5 * s.resolution * std::sqrt(2.0);
    std::vector<double> field(static_cast<std::size_t>(s.width) * s.height, 1e300);
    for (int cy = 0; cy < s.height; ++cy) {
        for (int cx = 0; cx < s.width; ++cx) {
            const Vec2 p = s.cell_center(cx, cy);
            double best2 = 1e300;
            for (const Vec2& c : occ_centers) {
                const double dx = c.x - p.x, dy = c.y - p.y;
                const double d2 = dx * dx + dy * dy;
                if (d2 < best2) best2 = d2;
            }
            field[s.idx(cx, cy)] = best2 >= 1e300 ? 1e300 : std::max(0.0, std::sqrt(best2) - half_diag);
        }
    }
    return field;
}

/// True iff none of n_samples evenly spaced points on [p_src, p_dst]
/// (endpoints included) lies in an occupied cell.
inline bool segment_clear(const Scene& s, const Vec2& p_src, const Vec2& p_dst, int n_samples = 50) {
    if (n_samples < 2) throw std::invalid_argument("segment_clear: n_samples must be >= 2");
    for (int i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) / (n_samples - 1);
        const Vec2 p = p_src + (p_dst - p_src) * t;
        if (s.occupied_at(p.x, p.y)) return false;
    }
    return true;
}

/// Flood fill over free cells from the first free cell; returns reachable mask.
inline std::vector<std::uint8_t> flood_free(const Scene& s, int start_cx = -1, int start_cy = -1) {
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(s.width) * s.height, 0);
    int sx = start_cx, sy = start_cy;
    if (sx < 0) {
        for (int cy = 0; cy < s.height && sx < 0; ++cy)
            for (int cx = 0; cx < s.width; ++cx)
                if (!s.occ[s.idx(cx, cy)]) { sx = cx; sy = cy; break; }
    }
    if (sx < 0) return seen;
    std::queue<std::pair<int, int>> q;
    q.push({sx, sy});
    seen[s.idx(sx, sy)] = 1;
    const int dx4[4] = {1, -1, 0, 0};
    const int dy4[4] = {0, 0, 1, -1};
    while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop();
        for (int k = 0; k < 4; ++k) {
            const int nx = cx + dx4[k], ny = cy + dy4[k];
            if (!s.in_bounds_cell(nx, ny) || s.occ[s.idx(nx, ny)] || seen[s.idx(nx, ny)]) continue;
            seen[s.idx(nx, ny)] = 1;
            q.push({nx, ny});
        }
    }
    return seen;
}

inline bool is_connected(const Scene& s) {
    const auto seen = flood_free(s);
    for (int i = 0; i < s.width * s.height; ++i)
        if (!s.occ[i] && !seen[i]) return false;
    return true;
}

/// Rejection-sample a position with at least min_clearance of free space
/// around it. Throws std::runtime_error when the scene is too tight.
inline Vec2 sample_free_position(const Scene& s, Rng& rng, double min_clearance,
                                 int max_tries = 20000) {
    for (int i = 0; i < max_tries; ++i) {
        const double x = rng.uniform(0.0, s.width_m());
        const double y = rng.uniform(0.0, s.height_m());
        if (s.occupied_at(x, y)) continue;
        if (clearance(s, x, y) >= min_clearance) return {x, y};
    }
    throw std::runtime_error("sample_free_position: no valid position found");
}

namespace detail {

struct Rect {  // cell-coordinate rectangle, inclusive bounds, interior free space
    int x0, y0, x1, y1;
    int w() const { return x1 - x0 + 1; }
    int h() const { return y1 - y0 + 1; }
    long area() const { return static_cast<long>(w()) * h(); }
};

inline constexpr int kMinRoomSide = 6;  // cells of free interior per room side
inline constexpr int kDoorCells = 9;    // door gap width (0.9 m at default resolution)

}  // namespace detail

/// Generate a connected scene of axis-aligned rooms joined by door gaps.
/// Deterministic in the spec seed. Throws std::invalid_argument when the
/// requested rooms cannot fit.
inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    using detail::Rect;
    if (spec.rooms < 1) throw std::invalid_argument("generate_scene: rooms must be >= 1");
    if (spec.clutter < 0.0 || spec.clutter > 1.0) throw std::invalid_argument("generate_scene: clutter must be in [0,1]");
    if (spec.width < 8 || spec.height < 8) throw std::invalid_argument("generate_scene: size must be at least 8x8");

    Scene s;
    s.name = spec.name;
    s.width = spec.width;
    s.height = spec.height;
    s.resolution = spec.resolution;
    const std::size_t n = static_cast<std::size_t>(s.width) * s.height;
    s.occ.assign(n, 0);
    s.tex.assign(n, 0.0);
    s.room.assign(n, kNoRoom);

    Rng rng(seed);

    // boundary walls
    for (int cx = 0; cx < s.width; ++cx) { s.occ[s.idx(cx, 0)] = 1; s.occ[s.idx(cx, s.height - 1)] = 1; }
    for (int cy = 0; cy < s.height; ++cy) { s.occ[s.idx(0, cy)] = 1; s.occ[s.idx(s.width - 1, cy)] = 1; }

    // Split the interior into `rooms` rectangles. Each split consumes a
    // 1-cell wall line; both halves must keep kMinRoomSide of free interior.
    std::vector<Rect> rects = {{1, 1, s.width - 2, s.height - 2}};
    struct Wall { int rect_a, rect_b; bool vertical; int line; int lo, hi; };
    std::vector<Wall> walls;
    while (static_cast<int>(rects.size()) < spec.rooms) {
        // largest splittable rect; ties broken by index for determinism
        int pick = -1;
        long best_area = -1;
        for (int i = 0; i < static_cast<int>(rects.size()); ++i) {
            const Rect& r = rects[i];
            const bool can_v = r.w() >= 2 * detail::kMinRoomSide + 1;
            const bool can_h = r.h() >= 2 * detail::kMinRoomSide + 1;
            if ((can_v || can_h) && r.area() > best_area) { best_area = r.area(); pick = i; }
        }
        if (pick < 0) throw std::invalid_argument("generate_scene: rooms do not fit in the requested size");
        Rect r = rects[pick];
        const bool can_v = r.w() >= 2 * detail::kMinRoomSide + 1;
        const bool can_h = r.h() >= 2 * detail::kMinRoomSide + 1;
        bool vertical;
        if (can_v && can_h) vertical = r.w() > r.h() ? true : (r.h() > r.w() ? false : rng.bernoulli(0.5));
        else vertical = can_v;
        if (vertical) {
            const int line = static_cast<int>(rng.uniform_int(r.x0 + detail::kMinRoomSide, r.x1 - detail::kMinRoomSide));
            for (int cy = r.y0; cy <= r.y1; ++cy) s.occ[s.idx(line, cy)] = 1;
            Rect left = {r.x0, r.y0, line - 1, r.y1};
            Rect right = {line + 1, r.y0, r.x1, r.y1};
            rects[pick] = left;
            rects.push_back(right);
            walls.push_back({pick, static_cast<int>(rects.size()) - 1, true, line, r.y0, r.y1});
        } else {
            const int line = static_cast<int>(rng.uniform_int(r.y0 + detail::kMinRoomSide, r.y1 - detail::kMinRoomSide));
            for (int cx = r.x0; cx <= r.x1; ++cx) s.occ[s.idx(cx, line)] = 1;
            Rect bot = {r.x0, r.y0, r.x1, line - 1};
            Rect top = {r.x0, line + 1, r.x1, r.y1};
            rects[pick] = bot;
            rects.push_back(top);
            walls.push_back({pick, static_cast<int>(rects.size()) - 1, false, line, r.x0, r.x1});
        }
    }

    // room ids by rect
    for (int i = 0; i < static_cast<int>(rects.size()); ++i) {
        const Rect& r = rects[i];
        for (int cy = r.y0; cy <= r.y1; ++cy)
            for (int cx = r.x0; cx <= r.x1; ++cx)
                if (!s.occ[s.idx(cx, cy)]) s.room[s.idx(cx, cy)] = i;
    }

    // Doors: for each wall line, find maximal free-free crossings and carve one
    // gap connecting the two sides. Adjacency from actual cell neighborhoods,
    // then a spanning check guarantees connectivity.
    std::vector<std::pair<int, int>> door_cells;
    auto carve_door = [&](const Wall& w) {
        // candidate positions where both sides of the wall are free
        std::vector<int> cand;
        for (int t = w.lo; t <= w.hi; ++t) {
            int ax, ay, bx, by;
            if (w.vertical) { ax = w.line - 1; ay = t; bx = w.line + 1; by = t; }
            else { ax = t; ay = w.line - 1; bx = t; by = w.line + 1; }
            if (!s.in_bounds_cell(ax, ay) || !s.in_bounds_cell(bx, by)) continue;
            if (!s.occ[s.idx(ax, ay)] && !s.occ[s.idx(bx, by)]) cand.push_back(t);
        }
        if (cand.empty()) return false;
        // longest contiguous run of candidates, so the door is one opening
        int run_s = 0, run_e = 0, best_s = 0, best_e = 0;
        for (int i = 1; i <= static_cast<int>(cand.size()); ++i) {
            if (i < static_cast<int>(cand.size()) && cand[i] == cand[i - 1] + 1) { run_e = i; continue; }
            if (run_e - run_s > best_e - best_s) { best_s = run_s; best_e = run_e; }
            run_s = run_e = i;
        }
        const int run_len = best_e - best_s + 1;
        const int door_w = std::min<int>(detail::kDoorCells, run_len);
        const int pick = best_s + static_cast<int>(rng.uniform_int(0, run_len - door_w));
        for (int k = 0; k < door_w; ++k) {
            const int t = cand[pick + k];
            const int cx = w.vertical ? w.line : t;
            const int cy = w.vertical ? t : w.line;
            s.occ[s.idx(cx, cy)] = 0;
            // door cells adopt the lower-indexed neighboring room id
            int rid = kNoRoom;
            const int nxs[4] = {cx - 1, cx + 1, cx, cx};
            const int nys[4] = {cy, cy, cy - 1, cy + 1};
            for (int q = 0; q < 4; ++q) {
                if (!s.in_bounds_cell(nxs[q], nys[q])) continue;
                const int rr = s.room[s.idx(nxs[q], nys[q])];
                if (rr != kNoRoom && (rid == kNoRoom || rr < rid)) rid = rr;
            }
            s.room[s.idx(cx, cy)] = rid;
            door_cells.push_back({cx, cy});
        }
        return true;
    };
    for (const Wall& w : walls) {
        if (!carve_door(w)) throw std::invalid_argument("generate_scene: could not carve a door, rooms do not fit");
    }
    // A wall might have split a region whose halves are reconnected elsewhere;
    // doors along every wall plus the split tree make the scene connected, but
    // verify and repair by carving extra doors if a rect ended up isolated.
    if (!is_connected(s)) {
        for (const Wall& w : walls) {
            if (is_connected(s)) break;
            carve_door(w);
        }
    }
    if (!is_connected(s)) throw std::invalid_argument("generate_scene: failed to connect rooms");

    // textures: per-room base tone plus a deterministic per-cell grain, walls darker
    std::vector<double> room_tone(rects.size());
    for (std::size_t i = 0; i < rects.size(); ++i) room_tone[i] = 0.25 + 0.7 * (static_cast<double>(i) + 0.5) / static_cast<double>(rects.size());
    for (int cy = 0; cy < s.height; ++cy) {
        for (int cx = 0; cx < s.width; ++cx) {
            const int i = s.idx(cx, cy);
            if (s.occ[i]) {
                s.tex[i] = 0.05 + 0.10 * rng.uniform01();
            } else {
                const double tone = s.room[i] == kNoRoom ? 0.5 : room_tone[s.room[i]];
                s.tex[i] = std::clamp(tone + 0.08 * (rng.uniform01() - 0.5), 0.0, 1.0);
            }
        }
    }

    // clutter: convert the requested fraction of free interior cells into
    // obstacles, keeping doors usable and connectivity intact
    if (spec.clutter > 0.0) {
        std::vector<int> free_cells;
        auto near_door = [&](int cx, int cy) {
            for (auto [dx, dy] : door_cells) {
                if (std::abs(dx - cx) <= 3 && std::abs(dy - cy) <= 3) return true;
            }
            return false;
        };
        for (int cy = 1; cy < s.height - 1; ++cy)
            for (int cx = 1; cx < s.width - 1; ++cx)
                if (!s.occ[s.idx(cx, cy)] && !near_door(cx, cy)) free_cells.push_back(s.idx(cx, cy));
        rng.shuffle(free_cells);
        long target = static_cast<long>(spec.clutter * static_cast<double>(free_cells.size()));
        long placed = 0;
        for (int cell : free_cells) {
            if (placed >= target) break;
            s.occ[cell] = 1;
            if (is_connected(s)) {
                s.tex[cell] = 0.05 + 0.10 * rng.uniform01();
                ++placed;
            } else {
                s.occ[cell] = 0;  // would disconnect, revert
            }
        }
    }

    return s;
}

// --- serialization (versioned JSON, row-major cell arrays) ---

inline nlohmann::json scene_to_json(const Scene& s) {
    nlohmann::json j;
    j["version"] = 1;
    j["name"] = s.name;
    j["resolution"] = s.resolution;
    j["width"] = s.width;
    j["height"] = s.height;
    j["cells"]["occ"] = std::vector<int>(s.occ.begin(), s.occ.end());
    j["cells"]["tex"] = s.tex;
    j["cells"]["room"] = s.room;
    return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("scene file: unsupported version");
    Scene s;
    s.name = j.at("name").get<std::string>();
    s.resolution = j.at("resolution").get<double>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    const auto occ = j.at("cells").at("occ").get<std::vector<int>>();
    s.occ.assign(occ.begin(), occ.end());
    s.tex = j.at("cells").at("tex").get<std::vector<double>>();
    s.room = j.at("cells").at("room").get<std::vector<int>>();
    const std::size_t n = static_cast<std::size_t>(s.width) * s.height;
    if (s.occ.size() != n || s.tex.size() != n || s.room.size() != n)
        throw std::runtime_error("scene file: cell array size mismatch");
    return s;
}

inline void save_scene(const Scene& s, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << scene_to_json(s).dump();
}

inline Scene load_scene(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    f >> j;
    return scene_from_json(j);
}

}  // namespace topnav::sim
