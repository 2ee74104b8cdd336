#pragma once

#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"
#include "pexcite/net.hpp"
#include "pexcite/data.hpp"
#include "pexcite/trajectory.hpp"
#include "pexcite/optim.hpp"
#include "pexcite/bounds.hpp"
#include "pexcite/equiv.hpp"
#include "pexcite/robust.hpp"
#include "pexcite/checkpoint.hpp"
