from sqlalchemy import Column, Integer, String, DateTime, Float, Text, JSON
from sqlalchemy.sql import func
from fiedlernet.database.database import Base


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    experiment = Column(String(100), index=True, nullable=False)
    regularizer = Column(String(20), nullable=False)  # 'none', 'l1', 'weight_decay', 'dropout', 'fiedler', ...
    coefficient = Column(Float, nullable=False)
    seed = Column(Integer, nullable=False)
    status = Column(String(20), nullable=False)  # 'completed' or 'failed'
    train_accuracy = Column(Float)
    test_accuracy = Column(Float)
    final_lambda2 = Column(Float)
    sparsity = Column(Float)
    lambda2_history = Column(JSON)
    error_message = Column(Text)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "experiment": self.experiment,
            "regularizer": self.regularizer,
            "coefficient": self.coefficient,
            "seed": self.seed,
            "status": self.status,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "final_lambda2": self.final_lambda2,
            "sparsity": self.sparsity,
            "error_message": self.error_message,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }

    def __repr__(self):
        return f"<ExperimentRun(id={self.id}, experiment='{self.experiment}', regularizer='{self.regularizer}', seed={self.seed})>"
