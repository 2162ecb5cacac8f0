// Advection solver: flux identities, time-step selection, conservation,
// hand-evaluated single steps and rank-count independence.

#include <catch2/catch_amalgamated.hpp>
#include <t8x/advection.hpp>

using namespace t8x;
using namespace t8x::advection;

namespace {

std::vector<detail_adv::FaceTable> tables_for(vranks::World<forest::Forest>& world,
                                              const FlowField& flow, double t) {
  std::vector<detail_adv::FaceTable> out;
  for (int p = 0; p < world.nranks(); ++p)
    out.push_back(detail_adv::build_face_table(world.state(p), flow, t));
  return out;
}

}  // namespace

TEST_CASE("zero flow: fluxes vanish and data is unchanged") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  auto world = forest::new_uniform(mesh, 2, 1);
  forest::ghost(world, forest::GhostVersion::V3);
  auto tables = tables_for(world, FlowField::zero(), 0.0);
  forest::ElementData data;
  data.width = 1;
  data.values.assign(world.state(0).local_leaves(), 1.5);
  auto before = data.values;
  step_once(tables[0], data, 0.125);
  CHECK(data.values == before);
}

TEST_CASE("conforming pair speeds are exact negatives; constant phi telescopes") {
  const auto mesh = cmesh::builtin_cmesh("unit_cube_tet6");
  auto world = forest::new_uniform(mesh, 2, 1);
  forest::ghost(world, forest::GhostVersion::V3);
  const auto flow = FlowField::constant_flow({0.3, -0.2, 0.95});
  auto tables = tables_for(world, flow, 0.0);
  const auto& table = tables[0];
  // Antisymmetry: for every interior pair, the partner's entry back to us
  // carries exactly the negated speed.
  const forest::Forest& f = world.state(0);
  int pairs = 0;
  for (size_t e = 0; e < table.volume.size(); ++e) {
    for (int fi = 0; fi < table.max_faces; ++fi) {
      const auto& entry = table.entries[e * size_t(table.max_faces) + size_t(fi)];
      if (entry.kind != detail_adv::FaceEntry::Pair) continue;
      const size_t pe = entry.partner;
      if (pe >= table.volume.size()) continue;
      for (int fj = 0; fj < table.max_faces; ++fj) {
        const auto& back = table.entries[pe * size_t(table.max_faces) + size_t(fj)];
        if (back.kind == detail_adv::FaceEntry::Pair && back.partner == e &&
            back.speed == -entry.speed && entry.speed != 0) {
          ++pairs;
          fj = table.max_faces;
        }
      }
    }
  }
  CHECK(pairs > 0);
  // Constant phi, divergence-free flow, closed cell: flux sum telescopes.
  forest::ElementData data;
  data.width = 1;
  data.values.assign(f.local_leaves(), 3.25);
  for (size_t e = 0; e < table.volume.size(); ++e) {
    double acc = 0;
    for (int fi = 0; fi < table.max_faces; ++fi) {
      const auto& entry = table.entries[e * size_t(table.max_faces) + size_t(fi)];
      if (entry.kind == detail_adv::FaceEntry::Pair) acc += 3.25 * entry.speed;
      // Boundary faces of the cube: the constant flow is NOT tangential, so
      // restrict the telescoping check to interior cells. Skip if boundary.
      if (entry.kind == detail_adv::FaceEntry::Boundary) acc = NAN;
    }
    if (!std::isnan(acc)) CHECK(std::fabs(acc) < 1e-12);
  }
}

TEST_CASE("choose_dt scales as expected") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_quad_periodic");
  auto world = forest::new_uniform(mesh, 4, 1);
  forest::ghost(world, forest::GhostVersion::V3);
  const auto flow = FlowField::rotation2d();
  auto tables = tables_for(world, flow, 0.0);
  const double dt1 = choose_dt(tables, 2, flow, 0.5, 1.0);
  const double dt2 = choose_dt(tables, 2, flow, 1.0, 1.0);
  CHECK(dt2 == Catch::Approx(2 * dt1));
  // One level finer halves the step.
  auto world5 = forest::new_uniform(mesh, 5, 1);
  forest::ghost(world5, forest::GhostVersion::V3);
  auto tables5 = tables_for(world5, flow, 0.0);
  const double dt5 = choose_dt(tables5, 2, flow, 0.5, 1.0);
  // The maximum |u| over midpoints creeps outward with the level, so the
  // ratio is two only up to that correction.
  CHECK(dt1 / dt5 == Catch::Approx(2.0).epsilon(0.05));
  // Direct formula: dt = C h / max |u(midpoint)|.
  double max_u = 0;
  for (size_t e = 0; e < tables[0].volume.size(); ++e)
    max_u = std::max(max_u, geometry::norm(flow(tables[0].midpoints[e], 0)));
  CHECK(dt1 == Catch::Approx(0.5 * (1.0 / 16.0) / max_u));
  // Zero flow falls back to a single step.
  CHECK(choose_dt(tables, 2, FlowField::zero(), 0.5, 1.0) == 1.0);
}

TEST_CASE("single upwind step on a 2x2 grid matches the hand evaluation") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_quad");
  auto world = forest::new_uniform(mesh, 1, 1);
  forest::ghost(world, forest::GhostVersion::V3);
  const auto flow = FlowField::constant_flow({1.0, 0.0, 0.0});
  auto tables = tables_for(world, flow, 0.0);
  forest::ElementData data;
  data.width = 1;
  // Cells in Morton order: (0,0), (1,0), (0,1), (1,1), each 0.5 x 0.5.
  data.values = {1.0, 2.0, 3.0, 4.0};
  const double dt = 0.1;
  step_once(tables[0], data, dt);
  // Upwind with u = (1,0) and zero-flux boundaries: the left cells lose
  // phi_left * u * A, the right cells gain it. Cell areas 0.25, faces 0.5.
  const double f = dt / 0.25 * 0.5;
  CHECK(data.values[0] == Catch::Approx(1.0 - f * 1.0));
  CHECK(data.values[1] == Catch::Approx(2.0 + f * 1.0));
  CHECK(data.values[2] == Catch::Approx(3.0 - f * 3.0));
  CHECK(data.values[3] == Catch::Approx(4.0 + f * 3.0));
}

TEST_CASE("band criterion") {
  SolverConfig cfg;
  cfg.initial_level = 3;
  cfg.extra_levels = 3;
  cfg.band = 4.0;
  CHECK(adapt_criterion(0.0, 1.0 / 64, 2, 3, cfg) == 1);       // band center refines
  CHECK(adapt_criterion(0.0, 1.0 / 64, 2, 6, cfg) == 0);       // at max level keeps
  CHECK(adapt_criterion(1e9, 1.0 / 64, 2, 4, cfg) == -1);      // far away coarsens
  CHECK(adapt_criterion(1e9, 1.0 / 64, 2, 3, cfg) == 0);       // not below minimum
  cfg.min_volume = 1.0;
  CHECK(adapt_criterion(0.0, 1.0 / 64, 2, 3, cfg) == 0);       // volume threshold
}

TEST_CASE("conservation and rank independence on short runs") {
  SolverConfig cfg;
  cfg.initial_level = 3;
  cfg.extra_levels = 0;
  cfg.cfl = 0.5;
  cfg.end_time = 0.05;
  const auto mesh = cmesh::builtin_cmesh("unit_square_quad_periodic");
  std::vector<RunResult> runs;
  for (int P : {1, 2, 5}) {
    cfg.ranks = P;
    runs.push_back(run(cfg, mesh, FlowField::rotation2d(),
                       LevelSetInit::circle({0.6, 0.6, 0}, 0.25)));
  }
  for (size_t i = 1; i < runs.size(); ++i) {
    REQUIRE(runs[i].steps.size() == runs[0].steps.size());
    for (size_t s = 0; s < runs[0].steps.size(); ++s) {
      CHECK(runs[i].steps[s].e_vol == runs[0].steps[s].e_vol);
      CHECK(runs[i].steps[s].integral_phi == runs[0].steps[s].integral_phi);
      CHECK(runs[i].steps[s].elements == runs[0].steps[s].elements);
    }
  }
  // Mass conservation over the run.
  const double m0 = runs[0].steps.front().integral_phi;
  const double m1 = runs[0].steps.back().integral_phi;
  CHECK(std::fabs(m1 - m0) <= 1e-10 * std::fabs(m0));

  // Adaptive runs are rank independent as well.
  cfg.extra_levels = 2;
  cfg.initial_level = 2;
  cfg.end_time = 0.03;
  std::vector<RunResult> adaptive;
  for (int P : {1, 3}) {
    cfg.ranks = P;
    adaptive.push_back(run(cfg, mesh, FlowField::rotation2d(),
                           LevelSetInit::circle({0.6, 0.6, 0}, 0.25)));
  }
  REQUIRE(adaptive[0].steps.size() == adaptive[1].steps.size());
  for (size_t s = 0; s < adaptive[0].steps.size(); ++s) {
    CHECK(adaptive[0].steps[s].e_vol == adaptive[1].steps[s].e_vol);
    CHECK(adaptive[0].steps[s].elements == adaptive[1].steps[s].elements);
  }
}

TEST_CASE("cube3d conservation over the reversal") {
  SolverConfig cfg;
  cfg.initial_level = 2;
  cfg.extra_levels = 0;
  cfg.cfl = 0.25;
  cfg.end_time = 1.0;
  cfg.ranks = 2;
  const auto mesh = cmesh::builtin_cmesh("unit_cube_hex");
  const auto result = run(cfg, mesh, FlowField::cube3d(),
                          LevelSetInit::sphere({0.6, 0.6, 0.6}, 0.25));
  const double m0 = result.steps.front().integral_phi;
  for (const auto& st : result.steps)
    CHECK(std::fabs(st.integral_phi - m0) <= 1e-8 * std::fabs(m0));
}

TEST_CASE("interpolation invariance: a no-change re-adapt keeps data") {
  SolverConfig cfg;
  cfg.initial_level = 2;
  cfg.extra_levels = 1;
  cfg.cfl = 0.3;
  cfg.end_time = 0.02;
  cfg.ranks = 2;
  cfg.adapt_period = 1;
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2_periodic");
  // A short adaptive run exercising interpolate + balance + partition with
  // data; the instability guard would throw on any misalignment.
  const auto result = run(cfg, mesh, FlowField::rotation2d(),
                          LevelSetInit::circle({0.6, 0.6, 0}, 0.25));
  CHECK(result.steps.size() == result.nsteps);
}
