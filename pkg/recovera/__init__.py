# recovera: Post-disaster recovery milestones from mobility data.

__version__ = "0.1.0"
