#include "mfbdsde/presets.hpp"

#include <cmath>
#include <vector>

#include "mfbdsde/errors.hpp"

namespace mfbdsde {

namespace {

CoefficientSet coeffs(const char* theta_f, const char* theta_g, const char* l,
                      const char* h, const char* b, const char* sigma, XiMode xi,
                      LipschitzMeta meta) {
    CoefficientSet c;
    c.theta_f = parse_expr(theta_f);
    c.theta_g = parse_expr(theta_g);
    c.l = parse_expr(l);
    c.h = parse_expr(h);
    c.b = parse_expr(b);
    c.sigma = parse_expr(sigma);
    c.xi = std::move(xi);
    c.lipschitz = meta;
    return c;
}

LipschitzMeta mean_coupled(double l_y, double l_yp, double l_v = 0.0) {
    LipschitzMeta m;
    m.L_y = l_y;
    m.L_yp = l_yp;
    m.L_v = l_v;
    m.L_gamma = l_yp > 0.0 ? 1.0 : 0.0;
    return m;
}

std::vector<Preset> build_presets() {
    std::vector<Preset> out;

    {
        Preset p;
        p.name = "constant";
        p.summary = "flat terminal value, zero drivers; the bundle stays constant";
        p.coeffs = coeffs("0", "0", "0", "0", "0", "0", XiConstant{1.0}, {});
        p.oracle_y0 = 1.0;
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "martingale";
        p.summary = "terminal equals the forward driver endpoint; Y tracks W, Z is 1";
        p.coeffs = coeffs("0", "0", "0", "0", "0", "0", XiWTerminal{}, {});
        p.m_outer = 1;
        p.k_inner = 8192;
        p.oracle_y0 = 0.0;
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "backward-driver";
        p.summary = "unit backward integrand; Y carries the group tail of B";
        p.coeffs = coeffs("0", "1", "0", "0", "0", "0", XiConstant{0.0}, {});
        p.m_outer = 8192;
        p.k_inner = 1;
        p.oracle_y0 = 0.0;
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "linear-mean";
        p.summary = "drift couples own value and population mean; initial mean is e";
        p.coeffs = coeffs("0.5*y + 0.5*yp", "0", "0", "0", "0", "0", XiConstant{1.0},
                          mean_coupled(0.5, 0.5));
        p.oracle_y0 = std::exp(1.0);
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "mkv-linear";
        p.summary = "exponential-growth forward population priced at its terminal value";
        p.coeffs = coeffs("0", "0", "0", "x", "x", "0.2", XiConstant{0.0}, {});
        p.x0 = 1.0;
        p.oracle_y0 = std::exp(1.0);
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "spde-basic";
        p.summary = "driftless unit-noise population; field adds the query point and the mean";
        p.coeffs = coeffs("0", "0", "0", "x + xp", "0", "1", XiConstant{0.0}, {});
        p.x0 = 0.5;
        p.oracle_y0 = 1.0;
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "control-linear";
        p.summary = "linear controlled driver with quadratic costs for the checker commands";
        p.coeffs = coeffs("0.2*y + 0.2*yp + v", "0.3", "(y^2 + v^2)/2", "y^2/2", "0", "0",
                          XiWTerminal{}, mean_coupled(0.2, 0.2, 1.0));
        p.m_outer = 2048;
        p.k_inner = 1;
        p.estimator = Estimator::pooled;
        p.has_control = true;
        out.push_back(std::move(p));
    }
    {
        Preset p;
        p.name = "lq-basic";
        p.summary = "unit-weight linear-quadratic problem with a closed-form optimum";
        LQCoefficients lqc;
        lqc.C1 = 1.0;
        lqc.R1 = 1.0;
        lqc.Q1_0 = 1.0;
        lqc.xi = 1.0;
        p.coeffs = lq_assemble(lqc).coeffs;
        p.lq = lqc;
        p.m_outer = 1024;
        p.k_inner = 1;
        p.estimator = Estimator::pooled;
        p.has_control = true;
        p.oracle_y0 = 0.5;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

std::span<const Preset> all_presets() {
    static const std::vector<Preset> presets = build_presets();
    return presets;
}

const Preset& find_preset(std::string_view name) {
    for (const Preset& p : all_presets())
        if (p.name == name) return p;
    throw InvalidArgumentError("unknown preset: " + std::string(name));
}

}  // namespace mfbdsde
