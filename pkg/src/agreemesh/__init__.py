"""Simulation and auditing of agreement protocols between forecasting agents."""
from ._jit import backend_name
from .agents import (AgentHandle, AlwaysDisagreeAgent, BaseModel, BayesianAgent,
                     BayesStrategy, ConstantAgent, ConverseActionAgent, ConverseAgent,
                     ConverseManyAgent, InconsistentMessage, PriorTable, ReplayAgent)
from .calibration import (CalibrationReport, OracleCapExceeded,
                          audit_conversation_calibration, audit_decision_calibration,
                          bucketed_ece, caldist, caldist_exact, caldist_upper, ece, sqe,
                          utility_sum)
from .core import (ActionMessage, Conversation, Day, NumericMessage, SettingDescriptor,
                   Transcript, TranscriptError, read_transcript, write_transcript)
from .harness import TheoremCheck, length_quantile_check
from .predictors import AOSA, AOST, UnbiasedPredictor
from .protocol import (AgreementCondition, ConfigError, ProtocolConfig, run_day,
                       run_experiment)
from .utility import UtilitySpec, best_response

__version__ = "0.1.0"
