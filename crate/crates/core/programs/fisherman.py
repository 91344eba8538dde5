class Fisherman():
  def __init__(self, fish):
    self.fish = fish

  def catch(self, fish):
    if fish in self.fish:
      self.fish[fish] += 1
    else:
      self.fish[fish] = 1

  def throw_away(self, fish):
    if fish in self.fish:
      self.fish[fish] -= 1
      if self.fish[fish] == 0:
        del self.fish[fish]
