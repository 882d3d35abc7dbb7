from .advice import RETRY_SENTINEL, action_penalties, find_agent, parse_advice
from .reflector import scripted_reflector
from .remote import (ProtocolError, RemoteClient, RemotePolicy, build_request,
                     parse_completion, remote_complete)
from .tabular import SamplingParams, ScoringError, TabularPolicy, fenced
