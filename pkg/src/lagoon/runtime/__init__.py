"""Multi-agent runtime: registry, agents, roles and the nodes that host them."""

from .agent import Agent
from .node import ClientNode, Node, ServerNode
from .packages import (
    ALL,
    BEST_OF,
    CollectionPackage,
    ControlPackage,
    Envelope,
    LoadReport,
    PackageError,
    TaskPackage,
    callback_channel,
    file_channel,
    stdout_channel,
)
from .policies import (
    Migration,
    TaskFileError,
    balance,
    collect,
    controller_select,
    parse_task_file,
    reassemble,
    split,
    worker_target,
)
from .registry import AgentId, DuplicateNameError, Registry
from .roles import (
    Answer,
    Client,
    Collector,
    Controller,
    LoadBalancer,
    ResultSink,
    Server,
    Splitter,
    TaskContractor,
    Worker,
    execute,
)
from .system import ClientProcess, LocalRuntime, RuntimeUnreachableError, control_address, wait_for
