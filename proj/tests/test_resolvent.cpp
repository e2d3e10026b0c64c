#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>
#include <fmloc/resolvent.hpp>

using namespace fmloc;

namespace {

OperatorEnsemble chain_ensemble(double lambda, std::uint64_t seed) {
    OperatorEnsemble ens;
    ens.dim = 1;
    ens.disorder = DisorderDistribution::uniform(-1.0, 1.0);
    ens.lambda = lambda;
    ens.master_seed = seed;
    return ens;
}

}  // namespace

TEST_CASE("spectral parameters", "[resolvent]") {
    auto zp = SpectralParameter::upper(0.5, 0.01);
    CHECK(zp.z() == cdouble(0.5, 0.01));
    CHECK(zp.conjugated().z() == cdouble(0.5, -0.01));
    CHECK_THROWS_AS(SpectralParameter(0.0, -1.0), ConfigError);
}

TEST_CASE("scalar and diagonal Green functions", "[resolvent]") {
    auto ens = chain_ensemble(1.0, 1);
    Region one(1, {SitePoint(0)});
    DisorderSample s{one, {2.0}, 0};
    auto H = assemble(ens, s);
    cdouble g = green(H, one, SpectralParameter::upper(0.0, 1.0), SitePoint(0), SitePoint(0));
    CHECK(std::abs(g - 1.0 / cdouble(2.0, -1.0)) < 1e-14);

    // hopping fully depleted: off-diagonal entries vanish identically
    Region chain = Region::box(SitePoint::origin(1), 2);
    auto s5 = sample_potential(ens, chain, 0);
    BondSet all = cut_set_within(Region(1, {SitePoint(-1), SitePoint(0)}), chain, nn_offsets(1));
    all.bonds.push_back({SitePoint(-2), SitePoint(-1)});
    all.bonds.push_back({SitePoint(1), SitePoint(2)});
    GreenSolver solver(assemble(ens, s5, &all), SpectralParameter::upper(0.3, 0.5));
    CHECK(std::abs(solver.entry(chain.index_of(SitePoint(-2)), chain.index_of(SitePoint(2)))) ==
          0.0);
}

TEST_CASE("sparse solves agree with the dense oracle", "[resolvent]") {
    auto ens = chain_ensemble(1.0, 2);
    Region chain(1, {SitePoint(1), SitePoint(2), SitePoint(3)});
    DisorderSample s{chain, {0.0, 0.0, 0.0}, 0};
    auto zp = SpectralParameter::upper(0.0, 1.0);

    GreenSolver solver(assemble(ens, s), zp);
    Eigen::MatrixXcd inv = dense_inverse(assemble_dense(ens, s), zp.z());
    CHECK(std::abs(solver.entry(0, 2) - inv(0, 2)) < 1e-12);

    // row solves match column solves entrywise
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y)
            CHECK(std::abs(solver.row(x)[y] - solver.column(y)[x]) < 1e-12);
}

TEST_CASE("conjugating z transposes and conjugates the kernel", "[resolvent]") {
    auto ens = chain_ensemble(0.8, 3);
    Region box = Region::box(SitePoint::origin(2), 2);
    OperatorEnsemble e2 = ens;
    e2.dim = 2;
    auto s = sample_potential(e2, box, 5);
    auto zp = SpectralParameter::upper(0.4, 0.2);
    GreenSolver up(assemble(e2, s), zp);
    GreenSolver down(assemble(e2, s), zp.conjugated());
    for (int k = 0; k < 10; ++k) {
        int x = (7 * k) % box.size(), y = (11 * k + 3) % box.size();
        CHECK(std::abs(down.entry(x, y) - std::conj(up.entry(y, x))) < 1e-12);
    }
}

TEST_CASE("singular systems fail loudly with a condition estimate", "[resolvent]") {
    auto ens = chain_ensemble(1.0, 4);
    Region one(1, {SitePoint(0)});
    DisorderSample s{one, {2.0}, 0};
    auto H = assemble(ens, s);
    bool threw = false;
    try {
        green(H, one, SpectralParameter(2.0, 0.0), SitePoint(0), SitePoint(0));
    } catch (const SolveError& e) {
        threw = true;
        CHECK(e.condition_estimate > GreenSolver::kConditionLimit);
    }
    CHECK(threw);
}

TEST_CASE("two-site reduction reproduces the Green function", "[resolvent]") {
    auto ens = chain_ensemble(1.3, 11);
    Region chain = Region::box(SitePoint::origin(1), 4);  // 9 sites; indices 0..8
    auto zp = SpectralParameter::upper(0.35, 0.0);

    for (std::uint64_t idx = 0; idx < 8; ++idx) {
        auto s = sample_potential(ens, chain, idx);
        int ix = 2, iy = 6;
        DisorderSample hat = s;
        hat.values[static_cast<std::size_t>(ix)] = 0.0;
        hat.values[static_cast<std::size_t>(iy)] = 0.0;
        GreenSolver hat_solver(assemble(ens, hat), zp);
        cdouble reduced =
            krein_2x2(hat_solver, ix, iy, s.values[static_cast<std::size_t>(ix)],
                      s.values[static_cast<std::size_t>(iy)], ens.lambda);
        GreenSolver full(assemble(ens, s), zp);
        CHECK(std::abs(reduced - full.entry(ix, iy)) < 1e-10);

        // coincident sites: one-site reduction
        DisorderSample hat1 = s;
        hat1.values[static_cast<std::size_t>(ix)] = 0.0;
        GreenSolver hat1_solver(assemble(ens, hat1), zp);
        cdouble reduced1 = krein_2x2(hat1_solver, ix, ix, s.values[static_cast<std::size_t>(ix)],
                                     s.values[static_cast<std::size_t>(ix)], ens.lambda);
        CHECK(std::abs(reduced1 - full.entry(ix, ix)) < 1e-10);
    }

    // a dominant diagonal drives the entry to zero along a ray
    auto s = sample_potential(ens, chain, 0);
    DisorderSample hat = s;
    hat.values[2] = 0.0;
    hat.values[6] = 0.0;
    GreenSolver hat_solver(assemble(ens, hat), zp);
    double prev = 1e300;
    for (double mag : {1e2, 1e4, 1e6}) {
        double cur = std::abs(krein_2x2(hat_solver, 2, 6, mag, 2.0 * mag, ens.lambda));
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("resolvent expansions hold to machine precision", "[resolvent]") {
    auto ens = chain_ensemble(1.0, 21);
    Region chain = Region::box(SitePoint::origin(1), 6);  // 13 sites
    Region w = Region::box(SitePoint(-3), 2);             // {-5..-1}
    auto s = sample_potential(ens, chain, 2);
    auto rep = identity_residuals(ens, s, w, SpectralParameter::upper(0.2, 0.1));
    CHECK(rep.first_order <= 1e-9);
    CHECK(rep.second_order <= 1e-9);
    CHECK(rep.three_factor <= 1e-9);
    CHECK(rep.vanishing_terms <= 1e-12);
    CHECK(rep.pairs_checked > 0);

    OperatorEnsemble e2 = ens;
    e2.dim = 2;
    Region sq = Region::box(SitePoint::origin(2), 2);
    Region w2 = Region::box(SitePoint(-1, -1), 1);
    auto s2 = sample_potential(e2, sq, 0);
    auto rep2 = identity_residuals(e2, s2, w2, SpectralParameter::upper(0.3, 0.01));
    CHECK(rep2.first_order <= 1e-9);
    CHECK(rep2.second_order <= 1e-9);
    CHECK(rep2.three_factor <= 1e-9);
    CHECK(rep2.vanishing_terms <= 1e-12);
}

TEST_CASE("full depletion reduces the expansion to the diagonal part", "[resolvent]") {
    auto ens = chain_ensemble(2.0, 31);
    Region chain = Region::box(SitePoint::origin(1), 5);
    auto s = sample_potential(ens, chain, 1);
    BondSet all;
    for (std::int64_t x = -5; x < 5; ++x) all.bonds.push_back({SitePoint(x), SitePoint(x + 1)});
    cdouble z(0.1, 0.7);
    Eigen::MatrixXcd G = dense_inverse(assemble_dense(ens, s), z);
    Eigen::MatrixXcd Gd = dense_inverse(assemble_dense(ens, s, &all), z);
    Eigen::MatrixXcd T = Eigen::MatrixXcd(depleted_coupling(ens, chain, all));
    double resid = (G - (Gd - Gd * T * G)).cwiseAbs().maxCoeff();
    CHECK(resid <= 1e-9);
}

TEST_CASE("depleted blocks match directly assembled subregions", "[resolvent]") {
    auto ens = chain_ensemble(1.0, 41);
    Region omega = Region::box(SitePoint::origin(1), 6);
    Region w = Region::box(SitePoint(4), 1);  // {3,4,5}
    auto s = sample_potential(ens, omega, 9);
    BondSet gamma = cut_set_within(w, omega, nn_offsets(1));
    auto zp = SpectralParameter::upper(-0.2, 0.3);

    GreenSolver depleted(assemble(ens, s, &gamma), zp);
    Region rest = omega.without(w);
    auto s_rest = sample_potential(ens, rest, 9);  // same per-site values by construction
    GreenSolver direct(assemble(ens, s_rest), zp);
    for (const auto& x : rest.sites)
        for (const auto& y : rest.sites)
            CHECK(std::abs(depleted.entry(omega.index_of(x), omega.index_of(y)) -
                           direct.entry(rest.index_of(x), rest.index_of(y))) < 1e-12);
}
