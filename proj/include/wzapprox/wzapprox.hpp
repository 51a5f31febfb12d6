#pragma once

#include <wzapprox/approximant.hpp>
#include <wzapprox/coefficients.hpp>
#include <wzapprox/errors.hpp>
#include <wzapprox/finite_solver.hpp>
#include <wzapprox/galerkin.hpp>
#include <wzapprox/harness.hpp>
#include <wzapprox/parallel.hpp>
#include <wzapprox/paths.hpp>
#include <wzapprox/rng.hpp>
#include <wzapprox/summation.hpp>
#include <wzapprox/systems.hpp>
#include <wzapprox/weak_spde.hpp>
