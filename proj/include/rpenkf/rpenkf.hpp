#pragma once

#include "rpenkf/core.hpp"
#include "rpenkf/roughpath.hpp"
#include "rpenkf/liftestim.hpp"
#include "rpenkf/maps.hpp"
#include "rpenkf/sdesim.hpp"
#include "rpenkf/ensemble.hpp"
#include "rpenkf/filters.hpp"
#include "rpenkf/mckvlasov.hpp"
#include "rpenkf/io.hpp"
#include "rpenkf/experiment.hpp"
