#ifndef MSRM_MSRM_HPP
#define MSRM_MSRM_HPP

#include "msrm/baselines.hpp"
#include "msrm/damping.hpp"
#include "msrm/domain_transform.hpp"
#include "msrm/errors.hpp"
#include "msrm/loss_models.hpp"
#include "msrm/risk_factors.hpp"
#include "msrm/rqmc.hpp"
#include "msrm/sobol.hpp"
#include "msrm/solver.hpp"
#include "msrm/special.hpp"
#include "msrm/surrogates.hpp"

#endif
