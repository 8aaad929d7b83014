from .client import (ProtocolError, RemoteBudgetExhausted, RemoteOracle, TransportError,
                     remote_query)
from .database import (EmbeddingDatabase, EmbeddingFileError, RankingModel, load_db, rank,
                       rank_batch, save_db)
from .local import LocalOracle, QueryBudget, oracle_query
from .server import RankingServer, serve

__all__ = [
    "EmbeddingDatabase", "EmbeddingFileError", "LocalOracle", "ProtocolError", "QueryBudget",
    "RankingModel", "RankingServer", "RemoteBudgetExhausted", "RemoteOracle", "TransportError",
    "load_db", "oracle_query", "rank", "rank_batch", "remote_query", "save_db", "serve",
]
