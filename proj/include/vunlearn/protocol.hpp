#pragma once

#include "vunlearn/protocol/session.hpp"
#include "vunlearn/protocol/transcript.hpp"
#include "vunlearn/protocol/verifier.hpp"
