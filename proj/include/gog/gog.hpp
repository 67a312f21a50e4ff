#pragma once

#include "gog/detect.hpp"
#include "gog/diffusion.hpp"
#include "gog/embed.hpp"
#include "gog/errors.hpp"
#include "gog/guidance.hpp"
#include "gog/metrics.hpp"
#include "gog/oracle_clients.hpp"
#include "gog/pipeline.hpp"
#include "gog/registry.hpp"
#include "gog/rewrite.hpp"
#include "gog/windows.hpp"
