#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>
#include <fmloc/ensemble.hpp>
#include <fmloc/quadrature.hpp>
#include <fmloc/rng.hpp>

using namespace fmloc;

TEST_CASE("counter block matches the published vectors", "[rng]") {
    // Known-answer vectors for the 4x32-10 generator
    auto z = Philox4x32::block({0, 0, 0, 0}, {0, 0});
    CHECK(z[0] == 0x6627e8d5u);
    CHECK(z[1] == 0xe169c58du);
    CHECK(z[2] == 0xbc57ac4cu);
    CHECK(z[3] == 0x9b00dbd8u);

    auto p = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                               {0xa4093822u, 0x299f31d0u});
    CHECK(p[0] == 0xd16cfe09u);
    CHECK(p[1] == 0x94fdccebu);
    CHECK(p[2] == 0x5001e420u);
    CHECK(p[3] == 0x24126ea1u);
}

TEST_CASE("keyed draws are pure functions of their key", "[rng]") {
    double a = keyed_uniform01(42, kStreamPotential, 7, hash_site(SitePoint(1, 2)));
    double b = keyed_uniform01(42, kStreamPotential, 7, hash_site(SitePoint(1, 2)));
    CHECK(a == b);
    CHECK(a >= 0.0);
    CHECK(a < 1.0);
    CHECK(a != keyed_uniform01(42, kStreamPotential, 8, hash_site(SitePoint(1, 2))));
    CHECK(a != keyed_uniform01(42, kStreamPotential, 7, hash_site(SitePoint(2, 2))));
    CHECK(a != keyed_uniform01(42, kStreamSearch, 7, hash_site(SitePoint(1, 2))));
    CHECK(a != keyed_uniform01(43, kStreamPotential, 7, hash_site(SitePoint(1, 2))));
}

TEST_CASE("distribution plumbing", "[ensemble]") {
    auto uni = DisorderDistribution::uniform(-1.0, 1.0);
    CHECK(uni.density_bound() == 0.5);
    CHECK(uni.quantile(0.75) == 0.5);
    CHECK(uni.cdf(0.5) == 0.75);

    auto tri = DisorderDistribution::piecewise_linear({-1.0, 0.0, 1.0}, {0.0, 1.0, 0.0});
    CHECK(tri.density(0.0) == Catch::Approx(1.0));
    CHECK(tri.cdf(0.0) == Catch::Approx(0.5));
    double mass = adaptive_simpson([&](double v) { return tri.density(v); }, -1.0, 1.0, 1e-12);
    CHECK(mass == Catch::Approx(1.0).margin(1e-9));
    for (double u : {0.05, 0.3, 0.5, 0.77, 0.99})
        CHECK(tri.cdf(tri.quantile(u)) == Catch::Approx(u).margin(1e-12));

    auto cau = DisorderDistribution::cauchy(2.0);
    for (double u : {0.1, 0.4, 0.9})
        CHECK(cau.cdf(cau.quantile(u)) == Catch::Approx(u).margin(1e-12));
    CHECK(cau.bounded_support() == false);
    CHECK(cau.decoupling_available() == false);
    CHECK(uni.decoupling_available() == true);

    CHECK(uni.fingerprint() != tri.fingerprint());
    CHECK_THROWS_AS(DisorderDistribution::uniform(1.0, -1.0), ConfigError);
    CHECK_THROWS_AS(DisorderDistribution::piecewise_linear({0.0, 1.0}, {-1.0, 1.0}), ConfigError);
}

TEST_CASE("power-weighted moments of the disorder law", "[ensemble]") {
    auto uni = DisorderDistribution::uniform(-1.0, 1.0);
    // int |v|^{-1/2} dv / 2 over [-1,1] = 2, exactly
    CHECK(rho_power_integral(uni, 0.5, 0.0) == 2.0);
    // center far outside the support: ~ |t|^{-s}
    CHECK(rho_power_integral(uni, 0.5, 1e9) == Catch::Approx(std::pow(1e9, -0.5)).epsilon(1e-6));

    auto tri = DisorderDistribution::piecewise_linear({-1.0, 0.0, 1.0}, {0.0, 1.0, 0.0});
    double direct = integrate_power_singularity(
        [&](double v) { return tri.density(v); }, 0.3, 0.25, -1.0, 1.0, 1e-12);
    CHECK(rho_power_integral(tri, 0.3, 0.25) == Catch::Approx(direct).epsilon(1e-8));

    // heavy tail: s = 1/2 at the center has the closed value sqrt(2)/sqrt(g),
    // and off-center values must match direct quadrature on a wide window
    auto cau = DisorderDistribution::cauchy(1.0);
    CHECK(rho_power_integral(cau, 0.5, 0.0) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-14));
    double R = 4e4;
    double win = integrate_power_singularity([&](double v) { return cau.density(v); }, 0.3, -1.7,
                                             -R, R, 1e-12);
    double tail = 2.0 / (M_PI * 1.3) * std::pow(R, -1.3);
    CHECK(rho_power_integral(cau, 0.3, -1.7) == Catch::Approx(win + tail).epsilon(1e-10));
}

TEST_CASE("potential sampling is reproducible and region independent", "[ensemble]") {
    OperatorEnsemble ens;
    ens.dim = 2;
    ens.disorder = DisorderDistribution::uniform(-1.0, 1.0);
    ens.lambda = 1.0;
    ens.master_seed = 99;
    ens.validate();

    Region small = Region::box(SitePoint::origin(2), 2);
    Region large = Region::box(SitePoint::origin(2), 5);
    auto s1 = sample_potential(ens, small, 3);
    auto s2 = sample_potential(ens, small, 3);
    CHECK(s1.values == s2.values);
    auto s3 = sample_potential(ens, large, 3);
    for (const auto& p : small.sites) CHECK(s1.at(p) == s3.at(p));

    auto s4 = sample_potential(ens, small, 4);
    CHECK(s1.values != s4.values);
}

TEST_CASE("sampled potentials follow the declared law", "[ensemble]") {
    OperatorEnsemble ens;
    ens.dim = 1;
    ens.disorder = DisorderDistribution::uniform(-1.0, 1.0);
    ens.master_seed = 7;
    const std::size_t n = 100000;
    Region line = Region::box(SitePoint::origin(1), static_cast<std::int64_t>(n / 2));
    auto s = sample_potential(ens, line, 0);
    double mean = 0.0;
    for (double v : s.values) mean += v;
    mean /= static_cast<double>(s.values.size());
    double sigma = 1.0 / std::sqrt(3.0 * static_cast<double>(s.values.size()));
    CHECK(std::abs(mean) <= 4.0 * sigma);
}

TEST_CASE("assembly produces the expected matrices", "[ensemble]") {
    OperatorEnsemble ens;
    ens.dim = 1;
    ens.disorder = DisorderDistribution::uniform(-1.0, 1.0);
    ens.lambda = 3.0;
    Region chain = Region::box(SitePoint(2), 1);  // {1,2,3}

    DisorderSample zero{chain, {0.0, 0.0, 0.0}, 0};
    Eigen::MatrixXcd H = assemble_dense(ens, zero);
    Eigen::MatrixXcd T(3, 3);
    T << 0, 1, 0, 1, 0, 1, 0, 1, 0;
    CHECK((H - T).cwiseAbs().maxCoeff() == 0.0);

    // full depletion leaves the diagonal
    DisorderSample s{chain, {0.5, -0.25, 1.0}, 0};
    BondSet all;
    all.bonds.push_back({SitePoint(1), SitePoint(2)});
    all.bonds.push_back({SitePoint(2), SitePoint(3)});
    Eigen::MatrixXcd D = assemble_dense(ens, s, &all);
    CHECK(D(0, 1) == cdouble(0.0));
    CHECK(D(1, 2) == cdouble(0.0));
    CHECK(D(0, 0) == cdouble(1.5));
    CHECK(D(1, 1) == cdouble(-0.75));
    CHECK(D(2, 2) == cdouble(3.0));

    // depleting the same bonds twice changes nothing
    BondSet doubled = all;
    doubled.bonds.push_back({SitePoint(2), SitePoint(1)});
    Eigen::MatrixXcd D2 = assemble_dense(ens, s, &doubled);
    CHECK((D - D2).cwiseAbs().maxCoeff() == 0.0);

    BondSet outside;
    outside.bonds.push_back({SitePoint(10), SitePoint(11)});
    CHECK_THROWS_AS(assemble(ens, s, &outside), ConfigError);
}

TEST_CASE("periodic background enters the diagonal", "[ensemble]") {
    OperatorEnsemble ens;
    ens.dim = 1;
    ens.disorder = DisorderDistribution::uniform(-1.0, 1.0);
    ens.lambda = 2.0;
    PeriodicPotential per;
    per.period = {2};
    per.values = {10.0, 20.0};
    ens.u_per = per;
    ens.validate();

    Region chain = Region::box(SitePoint::origin(1), 2);  // {-2..2}
    DisorderSample s{chain, {0.0, 0.0, 0.0, 0.0, 0.0}, 0};
    Eigen::MatrixXcd H = assemble_dense(ens, s);
    CHECK(H(0, 0) == cdouble(10.0));  // site -2
    CHECK(H(1, 1) == cdouble(20.0));  // site -1
    CHECK(H(2, 2) == cdouble(10.0));
}

TEST_CASE("magnetic phases are gauge consistent", "[ensemble]") {
    const double flux = 0.7;
    OperatorEnsemble ens;
    ens.dim = 2;
    ens.hopping = HoppingKernel::nearest_neighbor().with_flux(flux);
    ens.disorder = DisorderDistribution::uniform(-1.0, 1.0);
    ens.lambda = 1.0;
    ens.validate();

    Region sq = Region::box(SitePoint::origin(2), 1);
    auto s = sample_potential(ens, sq, 0);
    Eigen::MatrixXcd H = assemble_dense(ens, s);

    CHECK((H - H.adjoint()).cwiseAbs().maxCoeff() == 0.0);

    // directed product around a unit plaquette picks up exactly the flux
    auto at = [&](SitePoint a, SitePoint b) { return H(sq.index_of(a), sq.index_of(b)); };
    cdouble loop = at(SitePoint(0, 0), SitePoint(1, 0)) * at(SitePoint(1, 0), SitePoint(1, 1)) *
                   at(SitePoint(1, 1), SitePoint(0, 1)) * at(SitePoint(0, 1), SitePoint(0, 0));
    CHECK(std::abs(loop - std::exp(cdouble(0.0, flux))) < 1e-12);

    // a site-local phase change leaves the spectrum untouched
    const int n = sq.size();
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        U(i, i) = std::exp(cdouble(0.0, 0.3 * i * i - 1.1 * i));
    Eigen::MatrixXcd Hg = U * H * U.adjoint();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e1(H), e2(Hg);
    CHECK((e1.eigenvalues() - e2.eigenvalues()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("extended-range amplitudes and their boundary sums", "[ensemble]") {
    auto k = HoppingKernel::tempered(0.8, 1.1, 3);
    CHECK(k.amplitude(SitePoint(0, 2)) == Catch::Approx(0.8 * std::exp(-2.2)));
    CHECK(k.amplitude(SitePoint(4, 0)) == 0.0);
    CHECK(k.amplitude(SitePoint(0, 0)) == 0.0);

    // boundary sum against a brute-force double sum over a padded box
    const double s = 0.5;
    Region lam = Region::box(SitePoint::origin(2), 2);
    Region padded = Region::box(SitePoint::origin(2), 2 + 3);
    double brute = 0.0;
    for (const auto& u : lam.sites)
        for (const auto& v : padded.sites) {
            if (lam.contains(v)) continue;
            double amp = k.amplitude(v - u);
            if (amp > 0.0) brute += std::pow(amp, s);
        }
    CHECK(xi_s(k, lam, s) == Catch::Approx(brute).epsilon(1e-12));

    // nearest neighbor: the boundary sum counts the cut bonds
    auto nn = HoppingKernel::nearest_neighbor();
    CHECK(xi_s(nn, lam, s) == Catch::Approx(20.0));

    // automatic range drops a tail below 1e-12 of the retained sum
    auto ka = HoppingKernel::tempered_auto_range(1.0, 0.9, s, 2);
    CHECK(ka.truncation_error(s, 2) < 1e-12 * ka.sum_tau_s(s, 2));
    // the tempered sum with weight e^{m' |v|} converges only for m' < s m
    CHECK(ka.range >= 1);
}
