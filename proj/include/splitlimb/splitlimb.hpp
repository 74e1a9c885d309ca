#pragma once

#include "splitlimb/checksum.hpp"
#include "splitlimb/config.hpp"
#include "splitlimb/image.hpp"
#include "splitlimb/layers.hpp"
#include "splitlimb/matrix.hpp"
#include "splitlimb/models.hpp"
#include "splitlimb/oracle.hpp"
#include "splitlimb/parties.hpp"
#include "splitlimb/rng.hpp"
#include "splitlimb/session.hpp"
#include "splitlimb/shards.hpp"
#include "splitlimb/synth.hpp"
#include "splitlimb/trace.hpp"
#include "splitlimb/transport.hpp"
#include "splitlimb/wire.hpp"
#include "splitlimb/experiment.hpp"
