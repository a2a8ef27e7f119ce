from .context import Decision, Policy, PolicyContext, candidate_actions
from .features import DIM, featurize, featurize_named
from .loglinear import LogLinearPolicy
from .oracles import OraclePolicy, RandomPolicy, ScriptedPolicy
from .react import ReActOutput, ReActParseError, parse_react, render_react
from .remote import EndpointConfig, RemotePolicy, TransportError, remote_act, render_messages

__all__ = [
    "DIM", "Decision", "EndpointConfig", "LogLinearPolicy", "OraclePolicy", "Policy", "PolicyContext",
    "RandomPolicy", "ReActOutput", "ReActParseError", "RemotePolicy", "ScriptedPolicy", "TransportError",
    "candidate_actions", "featurize", "featurize_named", "parse_react", "remote_act", "render_messages",
    "render_react",
]
